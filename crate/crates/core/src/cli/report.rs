use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LayerCounts, SchemePreset};
use crate::error::{Error, Result};
use crate::fpga::{estimate, perf_table, reference_latencies, write_perf_table_csv, CostModel, DeviceProfile, OpProfile};
use crate::train::ExperimentMetrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEstimate {
    pub device: String,
    pub gops: f64,
    pub latency_ms: f64,
    pub speedup_over_fixed: f64,
    pub end_to_end_speedup: f64,
}

/// `metrics.json` written by `msp train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scheme: SchemePreset,
    pub ratio: String,
    pub lut_scheme: String,
    pub bits: u32,
    pub seed: u64,
    pub arch: String,
    pub dataset: String,
    pub train_samples: usize,
    pub test_samples: usize,
    pub accuracy: ExperimentMetrics,
    pub layers: Vec<LayerCounts>,
    pub estimate: RunEstimate,
}

/// Every `<runs>/<name>/metrics.json`, sorted by run name.
pub fn collect_runs(runs: &Path) -> Result<Vec<(String, RunMetrics)>> {
    if !runs.is_dir() {
        return Err(Error::Config(format!("runs directory {} does not exist", runs.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(runs)
        .map_err(|e| Error::io(runs, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.json").is_file())
        .collect();
    dirs.sort();
    dirs.into_iter()
        .map(|dir| {
            let path = dir.join("metrics.json");
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let m: RunMetrics =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, m))
        })
        .collect()
}

pub struct RenderedReport {
    pub markdown: String,
    pub runs_csv: Vec<u8>,
    pub perf_csv: Vec<u8>,
}

pub fn render_report(runs: &[(String, RunMetrics)], cost: &CostModel) -> Result<RenderedReport> {
    let mut md = String::from("# Quantization runs\n\n");
    md.push_str("| run | scheme | ratio | shift scheme | float acc | quantized acc | delta | feasibility gap | engines agree |\n");
    md.push_str("|---|---|---|---|---|---|---|---|---|\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "run",
        "scheme",
        "ratio",
        "lut_scheme",
        "bits",
        "float_test_acc",
        "quant_test_acc",
        "feasibility_gap",
        "engines_agree",
        "device",
        "gops",
        "speedup_over_fixed",
    ])?;
    for (name, m) in runs {
        let a = &m.accuracy;
        let scheme = format!("{:?}", m.scheme).to_lowercase();
        let _ = writeln!(
            md,
            "| {name} | {scheme} | {} | {} | {:.2}% | {:.2}% | {:+.2} | {:.2e} | {} |",
            m.ratio,
            m.lut_scheme,
            100.0 * a.float_test_acc,
            100.0 * a.quant_test_acc,
            100.0 * (a.quant_test_acc - a.float_test_acc),
            a.feasibility_gap,
            a.engines_agree
        );
        w.write_record([
            name.clone(),
            scheme,
            m.ratio.clone(),
            m.lut_scheme.clone(),
            m.bits.to_string(),
            format!("{:.6}", a.float_test_acc),
            format!("{:.6}", a.quant_test_acc),
            format!("{:.6e}", a.feasibility_gap),
            a.engines_agree.to_string(),
            m.estimate.device.clone(),
            format!("{:.3}", m.estimate.gops),
            format!("{:.4}", m.estimate.speedup_over_fixed),
        ])?;
    }
    let runs_csv = w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;

    let rows = perf_table(cost)?;
    md.push_str("\n# Modeled FPGA designs (ResNet-18 / MobileNet-v2 op profiles)\n\n");
    md.push_str("| device | ratio | LUT | DSP | BRAM36 | FF | ResNet-18 GOPS | MobileNet-v2 GOPS |\n");
    md.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in &rows {
        let _ = writeln!(
            md,
            "| {} | {} | {:.0} ({:.0}%) | {:.0} ({:.0}%) | {:.1} ({:.0}%) | {:.0} ({:.0}%) | {:.1} | {:.1} |",
            r.device,
            r.ratio,
            r.lut,
            r.lut_pct,
            r.dsp,
            r.dsp_pct,
            r.bram36,
            r.bram_pct,
            r.ff,
            r.ff_pct,
            r.resnet18_gops,
            r.mobilenet_v2_gops
        );
    }
    let mut perf_csv = Vec::new();
    write_perf_table_csv(&rows, &mut perf_csv)?;

    md.push_str("\n# Modeled ResNet-18 latency on xc7z045\n\n");
    md.push_str("| ratio | first/last quantized | measured ms | modeled ms |\n|---|---|---|---|\n");
    let z045 = DeviceProfile::xc7z045();
    let resnet = OpProfile::resnet18();
    for l in reference_latencies() {
        let e = estimate(&resnet, &z045, &l.ratio, cost, l.first_last)?;
        let quantized = l.first_last == crate::fpga::FirstLast::Quantized;
        let _ = writeln!(md, "| {} | {} | {:.1} | {:.2} |", l.ratio, if quantized { "yes" } else { "no" }, l.latency_ms, e.latency_ms);
    }
    Ok(RenderedReport {
        markdown: md,
        runs_csv,
        perf_csv,
    })
}
