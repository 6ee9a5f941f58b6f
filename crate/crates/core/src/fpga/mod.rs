//! FPGA resource, throughput and latency model for the three-core
//! (SPoT on LUTs, Fixed-4 and Fixed-8 on DSPs) accelerator.

mod calibrate;
mod cost;
mod device;
mod profile;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use calibrate::{
    calibrate, calibration_loss, nelder_mead, reference_designs, reference_latencies, MeasuredDesign,
    MeasuredLatency,
};
pub use cost::{
    estimate_perf, plan_cores, utilization_report, AffineCost, CostModel, FirstLast, LayerPerf, PEPlan,
    PerfEstimate, Utilization,
};
pub use device::DeviceProfile;
pub use profile::{LayerOps, OpProfile};

use crate::assign::SchemeRatio;
use crate::error::{Error, Result};

/// The document written by `msp estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub device: String,
    pub ratio: String,
    pub profile: String,
    pub first_last: FirstLast,
    pub plan: PEPlan,
    pub utilization: Utilization,
    pub gops: f64,
    pub latency_ms: f64,
    pub per_layer: Vec<LayerPerf>,
}

pub fn estimate(
    ops: &OpProfile,
    device: &DeviceProfile,
    ratio: &SchemeRatio,
    cost: &CostModel,
    first_last: FirstLast,
) -> Result<EstimateReport> {
    let plan = plan_cores(device, ratio, cost)?;
    let perf = estimate_perf(ops, &plan, ratio, device, cost, first_last)?;
    Ok(EstimateReport {
        device: device.name.clone(),
        ratio: ratio.to_string(),
        profile: ops.name.clone(),
        first_last,
        plan,
        utilization: utilization_report(&plan, device),
        gops: perf.gops,
        latency_ms: perf.latency_ms,
        per_layer: perf.per_layer,
    })
}

/// Throughput gain of `ratio` over the fixed-point-only design on the same device.
pub fn speedup_over_fixed(ops: &OpProfile, device: &DeviceProfile, ratio: &SchemeRatio, cost: &CostModel) -> Result<f64> {
    let msp = estimate(ops, device, ratio, cost, FirstLast::Quantized)?;
    let fixed = estimate(ops, device, &SchemeRatio::new(0.0, 1.0, 0.0)?, cost, FirstLast::Quantized)?;
    Ok(msp.gops / fixed.gops)
}

/// Latency of the fixed-only design with full-precision first/last layers
/// divided by the latency of `ratio` with every layer quantized.
pub fn end_to_end_speedup(ops: &OpProfile, device: &DeviceProfile, ratio: &SchemeRatio, cost: &CostModel) -> Result<f64> {
    let msp = estimate(ops, device, ratio, cost, FirstLast::Quantized)?;
    let base = estimate(ops, device, &SchemeRatio::new(0.0, 1.0, 0.0)?, cost, FirstLast::Unquantized)?;
    Ok(base.latency_ms / msp.latency_ms)
}

/// One row of the performance table: resources with utilization and GOPS on
/// the two reference networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfTableRow {
    pub device: String,
    pub ratio: String,
    pub lut: f64,
    pub lut_pct: f64,
    pub dsp: f64,
    pub dsp_pct: f64,
    pub bram36: f64,
    pub bram_pct: f64,
    pub ff: f64,
    pub ff_pct: f64,
    pub resnet18_gops: f64,
    pub mobilenet_v2_gops: f64,
}

/// Modeled rows for every (device, ratio) pair of the reference designs.
pub fn perf_table(cost: &CostModel) -> Result<Vec<PerfTableRow>> {
    let resnet = OpProfile::resnet18();
    let mobilenet = OpProfile::mobilenet_v2();
    reference_designs()
        .iter()
        .map(|d| {
            let device: DeviceProfile = d.device.parse()?;
            let r = estimate(&resnet, &device, &d.ratio, cost, FirstLast::Quantized)?;
            let m = estimate(&mobilenet, &device, &d.ratio, cost, FirstLast::Quantized)?;
            Ok(PerfTableRow {
                device: device.name.clone(),
                ratio: d.ratio.to_string(),
                lut: r.plan.lut_used,
                lut_pct: 100.0 * r.utilization.lut_util,
                dsp: r.plan.dsp_used,
                dsp_pct: 100.0 * r.utilization.dsp_util,
                bram36: r.plan.bram36_used,
                bram_pct: 100.0 * r.utilization.bram_util,
                ff: r.plan.ff_used,
                ff_pct: 100.0 * r.utilization.ff_util,
                resnet18_gops: r.gops,
                mobilenet_v2_gops: m.gops,
            })
        })
        .collect()
}

pub fn write_perf_table_csv<W: Write>(rows: &[PerfTableRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "device",
        "ratio",
        "lut",
        "lut_pct",
        "dsp",
        "dsp_pct",
        "bram36",
        "bram_pct",
        "ff",
        "ff_pct",
        "resnet18_gops",
        "mobilenet_v2_gops",
    ])?;
    for r in rows {
        w.write_record([
            r.device.clone(),
            r.ratio.clone(),
            format!("{:.0}", r.lut),
            format!("{:.1}", r.lut_pct),
            format!("{:.0}", r.dsp),
            format!("{:.1}", r.dsp_pct),
            format!("{:.1}", r.bram36),
            format!("{:.1}", r.bram_pct),
            format!("{:.0}", r.ff),
            format!("{:.1}", r.ff_pct),
            format!("{:.1}", r.resnet18_gops),
            format!("{:.1}", r.mobilenet_v2_gops),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn throughput_order_on_z045() {
        let cost = CostModel::shipped();
        let dev = DeviceProfile::xc7z045();
        let ops = OpProfile::resnet18();
        let g: Vec<f64> = ["0:100:0", "50:50:0", "67:33:0", "65:30:5"]
            .iter()
            .map(|r| estimate(&ops, &dev, &r.parse().unwrap(), &cost, FirstLast::Quantized).unwrap().gops)
            .collect();
        assert!(g.windows(2).all(|w| w[0] < w[1]), "{g:?}");
    }

    #[test]
    fn csv_has_header_and_eight_rows() {
        let rows = perf_table(&CostModel::shipped()).unwrap();
        let mut buf = Vec::new();
        write_perf_table_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("device,ratio,lut,lut_pct"));
    }
}
