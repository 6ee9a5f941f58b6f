//! Shift-add arithmetic on single weights, then a whole quantized MLP run on
//! both engines.
//!
//! ```text
//! cargo run --example shift_inference
//! ```

use msp_quant::assign::{quantize_model, SchemeConfig, SchemeRatio};
use msp_quant::data::{gen_synthetic, SyntheticKind};
use msp_quant::network::mlp;
use msp_quant::quant::{LevelSet, QuantScheme};
use msp_quant::shift::{compare_engines, infer, spot_mac, Engine, SpotWeightCode};
use msp_quant::train::calibrate_activations;

fn main() -> msp_quant::Result<()> {
    let levels = LevelSet::build(QuantScheme::spot(6, 3, 2)?)?;
    let code = levels.encode(0.625 / levels.n_raw())?;
    let w = SpotWeightCode::from_code(&levels, code)?;
    println!(
        "weight 0.625 = 2^-{} + 2^-{}, frame {} bits, numerator {}",
        w.p.unwrap(),
        w.q.unwrap(),
        w.frame,
        w.raw_numerator()
    );
    for a in [1u32, 5, 15] {
        println!("  a = {a:>2}: shifts give {:>4}, multiply gives {:>4}", spot_mac(a, &w), i64::from(a) * w.raw_numerator());
    }

    let data = gen_synthetic(SyntheticKind::Moons, 400, 11)?;
    let net = mlp(&[2, 16, 16, 2], 3)?;
    let mut model = quantize_model(&net, &SchemeRatio::MSP, &SchemeConfig::default())?;
    let q = calibrate_activations(&model.net, &data, 32, 4)?;
    for l in &mut model.layers {
        l.activation = q[l.index];
    }
    let shift = infer(&model, &data, Engine::Shift)?;
    println!("\nuntrained MLP, shift engine accuracy {:.3}", shift.accuracy);
    for c in &shift.checksums {
        println!("  layer {} {:<8} fnv1a {}", c.index, c.kind, c.fnv1a);
    }
    let cmp = compare_engines(&model, &data, 1e-9)?;
    println!(
        "engines agree: {} (prediction mismatches {}, max relative diff {:.2e})",
        cmp.agree, cmp.prediction_mismatches, cmp.max_relative_diff
    );
    Ok(())
}
