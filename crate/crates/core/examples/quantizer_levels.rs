//! Prints the level sets of the 4-bit fixed-point, PoT and SPoT quantizers and
//! projects a few weights onto each.
//!
//! ```text
//! cargo run --example quantizer_levels
//! ```

use msp_quant::quant::{project_nearest, LevelSet, QuantScheme};

fn main() -> msp_quant::Result<()> {
    let schemes = [
        QuantScheme::fixed(4)?,
        QuantScheme::pot(4)?,
        QuantScheme::spot_default(4)?,
        QuantScheme::spot(6, 3, 2)?,
    ];
    for scheme in schemes {
        let levels = LevelSet::build(scheme)?;
        let positive: Vec<String> = levels
            .levels()
            .iter()
            .filter(|l| **l >= 0.0)
            .map(|l| format!("{l:.4}"))
            .collect();
        println!("{scheme:<10} {} levels, N_raw = {}", levels.len(), levels.n_raw());
        println!("           non-negative: {}", positive.join(" "));
    }

    let alpha = 0.8;
    println!("\nprojections with alpha = {alpha}:");
    for w in [-0.9, -0.33, 0.05, 0.27, 0.5, 0.71] {
        let mut line = format!("w = {w:>6}:");
        for scheme in [QuantScheme::fixed(4)?, QuantScheme::pot(4)?, QuantScheme::spot_default(4)?] {
            let q = project_nearest(&LevelSet::build(scheme)?, alpha, w)?;
            line.push_str(&format!("  {scheme} -> {:>7.4} (code {:04b})", q.value, q.code));
        }
        println!("{line}");
    }

    let six = LevelSet::build(QuantScheme::spot(6, 3, 2)?)?;
    let raw = 0.625 / six.n_raw();
    let code = six.encode(raw)?;
    println!(
        "\nspot6:3:2 encodes raw level 0.625 as {code:06b}: sign {} | m1 field {:03b} | m2 field {:02b}",
        code >> 5,
        (code >> 2) & 0b111,
        code & 0b11
    );
    Ok(())
}
