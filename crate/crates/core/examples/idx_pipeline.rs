//! Writes a glyph-image IDX dataset, trains a small CNN on it, ADMM-quantizes
//! the CNN to 4-bit MSP and checks the shift engine against the float reference
//! on 2,000 test images.
//!
//! ```text
//! cargo run --release --example idx_pipeline
//! ```

use msp_quant::data::{gen_glyph_images, load_idx_dataset, write_idx_dataset, Split};
use msp_quant::network::NetworkBuilder;
use msp_quant::train::{run_experiment, TrainConfig};

fn main() -> msp_quant::Result<()> {
    let dir = std::env::temp_dir().join("msp_glyph_idx");
    for (split, n, seed) in [(Split::Train, 2000, 7), (Split::Test, 2000, 8)] {
        let (pixels, labels) = gen_glyph_images(n, seed);
        write_idx_dataset(&dir, split, 28, 28, &pixels, &labels)?;
    }
    let train_set = load_idx_dataset(&dir, Split::Train)?;
    let test_set = load_idx_dataset(&dir, Split::Test)?;
    println!("{} train / {} test images from {}", train_set.len(), test_set.len(), dir.display());

    let net = NetworkBuilder::new(&[1, 28, 28], 7)
        .conv(4, 3, 1, 1)
        .relu()
        .maxpool()
        .conv(8, 3, 1, 1)
        .relu()
        .maxpool()
        .flatten()
        .dense(10)
        .build()?;
    let float_cfg = TrainConfig {
        epochs: 3,
        activation_bits: None,
        ..TrainConfig::default()
    };
    let admm_cfg = TrainConfig {
        epochs: 3,
        rho: 0.05,
        rho_growth: 2.0,
        ..TrainConfig::default()
    };
    let exp = run_experiment(&net, &train_set, &test_set, &float_cfg, &admm_cfg)?;
    let m = &exp.metrics;
    println!("float accuracy {:.3}", m.float_test_acc);
    println!("4-bit MSP accuracy (shift) {:.3}, float reference {:.3}", m.quant_test_acc, m.float_ref_test_acc);
    println!("engines agree: {} (max relative diff {:.2e})", m.engines_agree, m.max_engine_relative_diff);
    Ok(())
}
