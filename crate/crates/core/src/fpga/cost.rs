use serde::{Deserialize, Serialize};

use super::device::DeviceProfile;
use super::profile::OpProfile;
use crate::assign::SchemeRatio;
use crate::error::{Error, Result};

/// `base + per_dsp_pe * (fixed + eight PEs) + per_spot_pe * spot PEs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineCost {
    pub base: f64,
    pub per_dsp_pe: f64,
    pub per_spot_pe: f64,
}

impl AffineCost {
    pub fn eval(&self, dsp_pes: f64, spot_pes: f64) -> f64 {
        self.base + self.per_dsp_pe * dsp_pes + self.per_spot_pe * spot_pes
    }
}

/// Per-PE resource costs and PE throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub version: u32,
    pub dsp_per_fixed4_pe: f64,
    pub dsp_per_fixed8_pe: f64,
    pub lut_per_spot_pe: f64,
    /// Control logic present in every design.
    pub lut_base: f64,
    /// Glue logic per DSP in use.
    pub lut_per_dsp: f64,
    /// Fraction of device LUTs the planner may fill.
    pub lut_cap: f64,
    pub macs_per_pe_cycle: f64,
    /// DSP cost of an unquantized first/last layer MAC, in Fixed-4 PE units.
    pub unquantized_dsp_factor: f64,
    pub bram36: AffineCost,
    pub ff: AffineCost,
}

const SHIPPED: &str = include_str!("../../calibration/estimator_v1.json");

impl CostModel {
    /// The calibration shipped with the crate (`calibration/estimator_v1.json`).
    pub fn shipped() -> Self {
        serde_json::from_str(SHIPPED).expect("shipped calibration parses")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dsp_per_fixed4_pe", self.dsp_per_fixed4_pe),
            ("dsp_per_fixed8_pe", self.dsp_per_fixed8_pe),
            ("lut_per_spot_pe", self.lut_per_spot_pe),
            ("lut_base", self.lut_base),
            ("lut_per_dsp", self.lut_per_dsp),
            ("lut_cap", self.lut_cap),
            ("macs_per_pe_cycle", self.macs_per_pe_cycle),
            ("unquantized_dsp_factor", self.unquantized_dsp_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("cost model {name} must be positive, got {v}")));
            }
        }
        if self.lut_cap > 1.0 {
            return Err(Error::Config(format!("lut_cap {} exceeds 1", self.lut_cap)));
        }
        Ok(())
    }
}

/// PE counts per GEMM core and the resources they imply. Counts are
/// continuous: the model sizes cores by throughput, not by instance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PEPlan {
    pub spot_pes: f64,
    pub fixed_pes: f64,
    pub eight_pes: f64,
    pub dsp_used: f64,
    pub lut_used: f64,
    pub bram36_used: f64,
    pub ff_used: f64,
}

impl PEPlan {
    pub fn dsp_pes(&self) -> f64 {
        self.fixed_pes + self.eight_pes
    }

    /// Multiplies every PE count by `k`; resource fields are left alone.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            spot_pes: self.spot_pes * k,
            fixed_pes: self.fixed_pes * k,
            eight_pes: self.eight_pes * k,
            ..*self
        }
    }
}

/// Sizes the three cores for `ratio`.
///
/// The DSP cores take every DSP, split so that Fixed-4 and Fixed-8 finish
/// their shares together. The SPoT core grows until it matches that finish
/// time or the LUT budget (`lut_cap * lut_total`) runs out.
pub fn plan_cores(device: &DeviceProfile, ratio: &SchemeRatio, cost: &CostModel) -> Result<PEPlan> {
    ratio.validate()?;
    cost.validate()?;
    let d = f64::from(device.dsp_total);
    let dsp_work = ratio.fixed * cost.dsp_per_fixed4_pe + ratio.eight * cost.dsp_per_fixed8_pe;
    let mut plan = PEPlan::default();
    if ratio.dsp_share() > 0.0 {
        if device.dsp_total == 0 {
            return Err(Error::Infeasible(format!("{} has no DSPs for the fixed-point share", device.name)));
        }
        plan.fixed_pes = d * ratio.fixed / dsp_work;
        plan.eight_pes = d * ratio.eight / dsp_work;
        plan.dsp_used = d;
    }
    let overhead = cost.lut_base + cost.lut_per_dsp * plan.dsp_used;
    if ratio.spot > 0.0 {
        let budget = cost.lut_cap * f64::from(device.lut_total) - overhead;
        if budget <= 0.0 {
            return Err(Error::Infeasible(format!("{} has no LUTs left for a SPoT core", device.name)));
        }
        let lut_bound = budget / cost.lut_per_spot_pe;
        plan.spot_pes = if dsp_work > 0.0 {
            lut_bound.min(ratio.spot * d / dsp_work)
        } else {
            lut_bound
        };
    }
    plan.lut_used = overhead + cost.lut_per_spot_pe * plan.spot_pes;
    plan.bram36_used = cost.bram36.eval(plan.dsp_pes(), plan.spot_pes);
    plan.ff_used = cost.ff.eval(plan.dsp_pes(), plan.spot_pes);
    let over = [
        ("DSP", plan.dsp_used, d),
        ("LUT", plan.lut_used, f64::from(device.lut_total)),
        ("BRAM36", plan.bram36_used, device.bram36_total),
        ("FF", plan.ff_used, f64::from(device.ff_total)),
    ]
    .into_iter()
    .find(|(_, used, total)| used > total);
    if let Some((name, used, total)) = over {
        return Err(Error::Infeasible(format!("{name} usage {used:.0} exceeds {total} on {}", device.name)));
    }
    Ok(plan)
}

/// How the first and last layers are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstLast {
    /// Split across the cores like every other layer.
    #[default]
    Quantized,
    /// Run at full precision on the DSPs alone, at `unquantized_dsp_factor` DSP per MAC.
    Unquantized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPerf {
    pub name: String,
    pub macs: u64,
    pub time_ms: f64,
    /// The core that finishes last: `spot`, `fixed`, `eight` or `dsp_full_precision`.
    pub bottleneck: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfEstimate {
    pub gops: f64,
    pub latency_ms: f64,
    pub total_macs: u64,
    pub per_layer: Vec<LayerPerf>,
}

/// Balanced-finish latency: each core handles its share of a layer's MACs and
/// the layer ends when the slowest core does.
pub fn estimate_perf(
    ops: &OpProfile,
    plan: &PEPlan,
    ratio: &SchemeRatio,
    device: &DeviceProfile,
    cost: &CostModel,
    first_last: FirstLast,
) -> Result<PerfEstimate> {
    ratio.validate()?;
    let rate = cost.macs_per_pe_cycle * device.frequency_hz();
    let cores = [
        ("spot", ratio.spot, plan.spot_pes),
        ("fixed", ratio.fixed, plan.fixed_pes),
        ("eight", ratio.eight, plan.eight_pes),
    ];
    for (name, share, pes) in cores {
        if share > 0.0 && !(pes > 0.0) {
            return Err(Error::Infeasible(format!("{name} core has no PEs but a {share} share")));
        }
    }
    let last = ops.layers.len().saturating_sub(1);
    let mut per_layer = Vec::with_capacity(ops.layers.len());
    let mut total_s = 0.0;
    for (i, layer) in ops.layers.iter().enumerate() {
        let macs = layer.macs as f64;
        let (secs, bottleneck) = if first_last == FirstLast::Unquantized && (i == 0 || i == last) {
            if device.dsp_total == 0 {
                return Err(Error::Infeasible("full-precision layers need DSPs".into()));
            }
            let dsp_pes = f64::from(device.dsp_total) / (cost.unquantized_dsp_factor * cost.dsp_per_fixed4_pe);
            (macs / (dsp_pes * rate), "dsp_full_precision")
        } else {
            cores
                .iter()
                .filter(|(_, share, _)| *share > 0.0)
                .map(|&(name, share, pes)| (share * macs / (pes * rate), name))
                .fold((0.0, "none"), |acc, c| if c.0 > acc.0 { c } else { acc })
        };
        total_s += secs;
        per_layer.push(LayerPerf {
            name: layer.name.clone(),
            macs: layer.macs,
            time_ms: secs * 1e3,
            bottleneck: bottleneck.to_string(),
        });
    }
    let total_macs = ops.total_macs();
    if !(total_s > 0.0) {
        return Err(Error::Infeasible("profile has no work".into()));
    }
    Ok(PerfEstimate {
        gops: 2.0 * total_macs as f64 / total_s / 1e9,
        latency_ms: total_s * 1e3,
        total_macs,
        per_layer,
    })
}

/// Fractions of each device resource in use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    pub dsp_util: f64,
    pub lut_util: f64,
    pub bram_util: f64,
    pub ff_util: f64,
}

pub fn utilization_report(plan: &PEPlan, device: &DeviceProfile) -> Utilization {
    let frac = |used: f64, total: f64| if total > 0.0 { used / total } else { 0.0 };
    Utilization {
        dsp_util: frac(plan.dsp_used, f64::from(device.dsp_total)),
        lut_util: frac(plan.lut_used, f64::from(device.lut_total)),
        bram_util: frac(plan.bram36_used, device.bram36_total),
        ff_util: frac(plan.ff_used, f64::from(device.ff_total)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z045() -> DeviceProfile {
        DeviceProfile::xc7z045()
    }

    #[test]
    fn fixed_only_takes_every_dsp() {
        let plan = plan_cores(&z045(), &"0:100:0".parse().unwrap(), &CostModel::shipped()).unwrap();
        assert_eq!(plan.dsp_used, 900.0);
        assert_eq!(plan.spot_pes, 0.0);
        assert_eq!(utilization_report(&plan, &z045()).dsp_util, 1.0);
    }

    #[test]
    fn spot_only_is_lut_bound() {
        let cost = CostModel::shipped();
        let plan = plan_cores(&z045(), &"100:0:0".parse().unwrap(), &cost).unwrap();
        assert_eq!(plan.dsp_used, 0.0);
        assert!(plan.spot_pes > 0.0);
        let lut_cap = cost.lut_cap * 218_600.0;
        assert!((plan.lut_used - lut_cap).abs() < 1e-6 * lut_cap);
    }

    #[test]
    fn empty_plan_uses_nothing() {
        let u = utilization_report(&PEPlan::default(), &z045());
        assert_eq!((u.dsp_util, u.lut_util, u.bram_util, u.ff_util), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_pe_core_with_share_is_rejected() {
        let cost = CostModel::shipped();
        let ratio = SchemeRatio::MSP;
        let mut plan = plan_cores(&z045(), &ratio, &cost).unwrap();
        plan.eight_pes = 0.0;
        let err = estimate_perf(&OpProfile::resnet18(), &plan, &ratio, &z045(), &cost, FirstLast::Quantized);
        assert!(matches!(err, Err(Error::Infeasible(_))));
    }

    #[test]
    fn doubling_pes_halves_latency() {
        let cost = CostModel::shipped();
        let ratio = SchemeRatio::MSP;
        let plan = plan_cores(&z045(), &ratio, &cost).unwrap();
        let ops = OpProfile::resnet18();
        let a = estimate_perf(&ops, &plan, &ratio, &z045(), &cost, FirstLast::Quantized).unwrap();
        let b = estimate_perf(&ops, &plan.scaled(2.0), &ratio, &z045(), &cost, FirstLast::Quantized).unwrap();
        assert!((a.latency_ms / b.latency_ms - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lut_grows_with_spot_share() {
        let cost = CostModel::shipped();
        let luts: Vec<f64> = ["0:100:0", "50:50:0", "65:30:5"]
            .iter()
            .map(|r| plan_cores(&z045(), &r.parse().unwrap(), &cost).unwrap().lut_used)
            .collect();
        assert!(luts[0] < luts[1] && luts[1] < luts[2], "{luts:?}");
    }
}
