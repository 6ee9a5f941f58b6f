//! Refits the estimator cost model against the reference FPGA measurements and
//! rewrites `calibration/estimator_v1.json`.
//!
//! ```text
//! cargo run --release --example calibrate_estimator [-- --check]
//! ```
//! With `--check` the fitted model is printed but the file is left alone.

use msp_quant::fpga::{
    calibrate, end_to_end_speedup, perf_table, reference_latencies, speedup_over_fixed, estimate,
    DeviceProfile, OpProfile,
};

fn main() -> msp_quant::Result<()> {
    let check = std::env::args().any(|a| a == "--check");
    let shipped = msp_quant::fpga::CostModel::shipped();
    let shipped_loss = msp_quant::fpga::calibration_loss(&shipped, &msp_quant::fpga::reference_designs(), &reference_latencies())?;
    println!("shipped log-loss {shipped_loss:.5}");
    let (cost, loss) = calibrate()?;
    println!("log-loss {loss:.5}");
    println!("{}", serde_json::to_string_pretty(&cost)?);

    println!("\n{:<8} {:<9} {:>8} {:>8} {:>7} {:>8} {:>8}", "device", "ratio", "LUT", "DSP", "BRAM", "FF", "GOPS");
    for row in perf_table(&cost)? {
        println!(
            "{:<8} {:<9} {:>8.0} {:>8.0} {:>7.1} {:>8.0} {:>8.1}",
            row.device, row.ratio, row.lut, row.dsp, row.bram36, row.ff, row.resnet18_gops
        );
    }

    let z045 = DeviceProfile::xc7z045();
    let resnet = OpProfile::resnet18();
    println!("\nratio     first/last  measured ms  modeled ms");
    for l in reference_latencies() {
        let r = estimate(&resnet, &z045, &l.ratio, &cost, l.first_last)?;
        println!("{:<9} {:<11?} {:>11.1} {:>11.2}", l.ratio.to_string(), l.first_last, l.latency_ms, r.latency_ms);
    }

    for dev in DeviceProfile::presets() {
        println!(
            "{}: MSP {} throughput gain {:.3}",
            dev.name,
            dev.msp_ratio,
            speedup_over_fixed(&resnet, &dev, &dev.msp_ratio, &cost)?
        );
    }
    println!("end-to-end speedup {:.3}", end_to_end_speedup(&resnet, &z045, &z045.msp_ratio, &cost)?);

    if !check {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/calibration/estimator_v1.json");
        let mut text = serde_json::to_string_pretty(&cost)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| msp_quant::Error::Io {
            path: path.into(),
            source: e,
        })?;
        println!("wrote {path}");
    }
    Ok(())
}
