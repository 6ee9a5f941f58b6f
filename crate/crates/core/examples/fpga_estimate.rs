//! Plans cores and estimates ResNet-18 throughput on both Zynq presets across
//! a sweep of SPoT shares, then writes the modeled performance table as CSV.
//!
//! ```text
//! cargo run --example fpga_estimate [-- perf_table.csv]
//! ```

use msp_quant::assign::SchemeRatio;
use msp_quant::fpga::{
    end_to_end_speedup, estimate, perf_table, speedup_over_fixed, write_perf_table_csv, CostModel, DeviceProfile,
    FirstLast, OpProfile,
};

fn main() -> msp_quant::Result<()> {
    let cost = CostModel::shipped();
    let resnet = OpProfile::resnet18();
    println!("ResNet-18: {:.3} GMACs over {} layers\n", resnet.total_macs() as f64 / 1e9, resnet.layers.len());

    for device in DeviceProfile::presets() {
        println!("{} ({} DSP, {} LUT)", device.name, device.dsp_total, device.lut_total);
        println!("  spot%   SPoT PEs   LUT%    GOPS");
        for spot in (0..=90).step_by(10) {
            let ratio = SchemeRatio::from_percent(spot, 100 - spot, 0)?;
            let r = estimate(&resnet, &device, &ratio, &cost, FirstLast::Quantized)?;
            println!(
                "  {spot:>4}  {:>9.0}  {:>5.1}  {:>6.1}",
                r.plan.spot_pes,
                100.0 * r.utilization.lut_util,
                r.gops
            );
        }
        println!(
            "  MSP {}: {:.2}x the fixed-only throughput\n",
            device.msp_ratio,
            speedup_over_fixed(&resnet, &device, &device.msp_ratio, &cost)?
        );
    }
    let z045 = DeviceProfile::xc7z045();
    println!(
        "end-to-end latency gain over fixed-only with full-precision first/last layers: {:.2}x",
        end_to_end_speedup(&resnet, &z045, &SchemeRatio::MSP, &cost)?
    );

    let rows = perf_table(&cost)?;
    match std::env::args().nth(1) {
        Some(path) => {
            let file = std::fs::File::create(&path).map_err(|e| msp_quant::Error::Io {
                path: path.clone().into(),
                source: e,
            })?;
            write_perf_table_csv(&rows, file)?;
            println!("wrote {path}");
        }
        None => write_perf_table_csv(&rows, std::io::stdout())?,
    }
    Ok(())
}
