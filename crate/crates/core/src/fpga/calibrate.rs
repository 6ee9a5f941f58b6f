//! Fitting [`CostModel`] to measured FPGA designs.
//!
//! Throughput and LUT parameters are fit jointly by Nelder-Mead on squared
//! log errors; BRAM and FF slopes follow by linear least squares on the
//! resulting PE counts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cost::{estimate_perf, plan_cores, AffineCost, CostModel, FirstLast};
use super::device::DeviceProfile;
use super::profile::OpProfile;
use crate::assign::SchemeRatio;
use crate::error::{Error, Result};

/// One measured design: ResNet-18 throughput plus resource counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredDesign {
    pub device: String,
    pub ratio: SchemeRatio,
    pub resnet18_gops: f64,
    pub mobilenet_v2_gops: f64,
    pub lut: f64,
    pub bram36: f64,
    pub ff: f64,
}

/// One measured end-to-end ResNet-18 latency on XC7Z045.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredLatency {
    pub ratio: SchemeRatio,
    pub first_last: FirstLast,
    pub latency_ms: f64,
}

fn ratio(s: f64, f: f64, e: f64) -> SchemeRatio {
    SchemeRatio::new(s, f, e).expect("reference ratio")
}

/// The eight reference designs (four ratios on each device).
pub fn reference_designs() -> Vec<MeasuredDesign> {
    let rows = [
        ("xc7z020", ratio(0.0, 1.0, 0.0), 31.8, 26.6, 12_200.0, 39.0, 9_400.0),
        ("xc7z020", ratio(0.5, 0.5, 0.0), 51.6, 47.4, 22_900.0, 49.0, 14_500.0),
        ("xc7z020", ratio(0.6, 0.4, 0.0), 58.2, 55.3, 28_300.0, 56.0, 17_100.0),
        ("xc7z020", ratio(0.6, 0.35, 0.05), 73.8, 58.7, 31_100.0, 59.0, 20_500.0),
        ("xc7z045", ratio(0.0, 1.0, 0.0), 120.5, 102.8, 41_800.0, 160.0, 31_300.0),
        ("xc7z045", ratio(0.5, 0.5, 0.0), 195.3, 190.6, 93_400.0, 194.0, 65_700.0),
        ("xc7z045", ratio(2.0 / 3.0, 1.0 / 3.0, 0.0), 244.5, 236.5, 145_000.0, 225.5, 111_600.0),
        ("xc7z045", ratio(0.65, 0.3, 0.05), 325.0, 262.2, 151_400.0, 245.0, 114_200.0),
    ];
    rows.into_iter()
        .map(|(device, ratio, rg, mg, lut, bram36, ff)| MeasuredDesign {
            device: device.into(),
            ratio,
            resnet18_gops: rg,
            mobilenet_v2_gops: mg,
            lut,
            bram36,
            ff,
        })
        .collect()
}

/// The eleven reference latencies.
pub fn reference_latencies() -> Vec<MeasuredLatency> {
    use FirstLast::{Quantized as Q, Unquantized as U};
    let rows = [
        (ratio(0.65, 0.3, 0.05), Q, 11.2),
        (ratio(0.95, 0.0, 0.05), Q, 13.7),
        (ratio(0.9, 0.0, 0.1), Q, 13.3),
        (ratio(0.0, 0.95, 0.05), Q, 29.1),
        (ratio(0.5, 0.5, 0.0), U, 20.1),
        (ratio(0.5, 0.5, 0.0), Q, 12.2),
        (ratio(0.67, 0.33, 0.0), U, 15.4),
        (ratio(0.0, 1.0, 0.0), U, 39.5),
        (ratio(0.0, 1.0, 0.0), Q, 25.4),
        (ratio(1.0, 0.0, 0.0), U, 22.9),
        (ratio(1.0, 0.0, 0.0), Q, 16.5),
    ];
    rows.into_iter()
        .map(|(ratio, first_last, latency_ms)| MeasuredLatency {
            ratio,
            first_last,
            latency_ms,
        })
        .collect()
}

/// Minimizes `f` from `x0` with the Nelder-Mead simplex method
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
pub fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_iter: usize, ftol: f64) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let along = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if (worst - best).abs() <= ftol * (1.0 + best.abs()) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            centroid.iter_mut().zip(x).for_each(|(c, v)| *c += v / n as f64);
        }
        let xr = along(&centroid, &simplex[n].0, -1.0);
        let fr = f(&xr);
        if fr < best {
            let xe = along(&centroid, &simplex[n].0, -2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst {
                let xc = along(&centroid, &xr, 0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(&centroid, &simplex[n].0, 0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < fr.min(worst) {
                simplex[n] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    entry.0 = along(&x0, &entry.0, 0.5);
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// Maps free log-parameters onto a cost model. Order: macs_per_pe_cycle,
/// dsp_per_fixed8_pe, lut_per_spot_pe, lut_base, lut_per_dsp, lut_cap.
fn decode(x: &[f64], template: &CostModel) -> CostModel {
    let p: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    CostModel {
        macs_per_pe_cycle: p[0],
        dsp_per_fixed8_pe: p[1].clamp(1.0, 4.0),
        lut_per_spot_pe: p[2],
        lut_base: p[3],
        lut_per_dsp: p[4],
        lut_cap: p[5].min(1.0),
        ..template.clone()
    }
}

/// Sum of squared log errors of GOPS and LUTs on `designs` plus latency on `latencies`.
pub fn calibration_loss(cost: &CostModel, designs: &[MeasuredDesign], latencies: &[MeasuredLatency]) -> Result<f64> {
    let ops = OpProfile::resnet18();
    let mut loss = 0.0;
    for d in designs {
        let device: DeviceProfile = d.device.parse()?;
        let plan = plan_cores(&device, &d.ratio, cost)?;
        let perf = estimate_perf(&ops, &plan, &d.ratio, &device, cost, FirstLast::Quantized)?;
        loss += (perf.gops / d.resnet18_gops).ln().powi(2) + (plan.lut_used / d.lut).ln().powi(2);
    }
    let z045 = DeviceProfile::xc7z045();
    for l in latencies {
        let plan = plan_cores(&z045, &l.ratio, cost)?;
        let perf = estimate_perf(&ops, &plan, &l.ratio, &z045, cost, l.first_last)?;
        loss += (perf.latency_ms / l.latency_ms).ln().powi(2);
    }
    Ok(loss)
}

/// `y ~ X b` by SVD least squares.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    x.clone()
        .svd(true, true)
        .solve(y, 1e-12)
        .map_err(|e| Error::Config(format!("least squares failed: {e}")))
}

/// Affine fit of `target` on (1, DSP PEs, SPoT PEs). Any coefficient that
/// comes out negative is pinned to zero and the rest refit.
fn fit_affine(points: &[(f64, f64, f64)]) -> Result<AffineCost> {
    let mut active = [true; 3];
    loop {
        let idx: Vec<usize> = (0..3).filter(|&k| active[k]).collect();
        let feature = |r: usize, k: usize| match k {
            0 => 1.0,
            1 => points[r].0,
            _ => points[r].1,
        };
        let x = DMatrix::from_fn(points.len(), idx.len(), |r, c| feature(r, idx[c]));
        let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.2));
        let b = least_squares(&x, &y)?;
        let mut coef = [0.0; 3];
        for (c, &k) in idx.iter().enumerate() {
            coef[k] = b[c];
        }
        match coef.iter().position(|c| *c < 0.0) {
            Some(k) => active[k] = false,
            None => {
                return Ok(AffineCost {
                    base: coef[0],
                    per_dsp_pe: coef[1],
                    per_spot_pe: coef[2],
                })
            }
        }
    }
}

/// Full calibration against the reference measurements.
pub fn calibrate() -> Result<(CostModel, f64)> {
    let designs = reference_designs();
    let latencies = reference_latencies();
    let template = CostModel {
        version: 1,
        dsp_per_fixed4_pe: 1.0,
        dsp_per_fixed8_pe: 2.0,
        lut_per_spot_pe: 60.0,
        lut_base: 1000.0,
        lut_per_dsp: 40.0,
        lut_cap: 0.7,
        macs_per_pe_cycle: 0.7,
        unquantized_dsp_factor: 4.0,
        bram36: AffineCost {
            base: 0.0,
            per_dsp_pe: 0.0,
            per_spot_pe: 0.0,
        },
        ff: AffineCost {
            base: 0.0,
            per_dsp_pe: 0.0,
            per_spot_pe: 0.0,
        },
    };
    let objective = |x: &[f64]| {
        calibration_loss(&decode(x, &template), &designs, &latencies).unwrap_or(1e9)
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let starts = [1.0f64, 2.0, 4.0].into_iter().flat_map(|d8| {
        [500.0f64, 2000.0, 5000.0]
            .into_iter()
            .flat_map(move |base| [0.6f64, 0.8].map(|cap| [0.7, d8, 60.0, base, 40.0, cap].map(f64::ln)))
    });
    for x0 in starts {
        let mut cur = nelder_mead(&objective, &x0, 0.1, 20_000, 1e-14);
        for _ in 0..50 {
            let next = nelder_mead(&objective, &cur.0, 0.05, 20_000, 1e-15);
            let done = cur.1 - next.1 < 1e-12;
            cur = next;
            if done {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| cur.1 < b.1) {
            best = Some(cur);
        }
    }
    let (x, loss) = best.expect("at least one start");
    let mut cost = decode(&x, &template);
    let mut bram = Vec::new();
    let mut ff = Vec::new();
    for d in &designs {
        let device: DeviceProfile = d.device.parse()?;
        let plan = plan_cores(&device, &d.ratio, &cost)?;
        bram.push((plan.dsp_pes(), plan.spot_pes, d.bram36));
        ff.push((plan.dsp_pes(), plan.spot_pes, d.ff));
    }
    cost.bram36 = fit_affine(&bram)?;
    cost.ff = fit_affine(&ff)?;
    Ok((cost, loss))
}
