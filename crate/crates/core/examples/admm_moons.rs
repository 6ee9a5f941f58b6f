//! Float-trains a 2-16-16-2 MLP on two moons, then ADMM-quantizes it to 4-bit
//! MSP (65:30:5) with 4-bit activations and checks the result on the shift engine.
//!
//! ```text
//! cargo run --release --example admm_moons [-- rho rho_growth rho_max]
//! ```

use msp_quant::data::{gen_synthetic, SyntheticKind};
use msp_quant::network::mlp;
use msp_quant::train::{run_experiment, TrainConfig};

fn main() -> msp_quant::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let data = gen_synthetic(SyntheticKind::Moons, 1500, 7)?;
    let train_idx: Vec<usize> = (0..1000).collect();
    let test_idx: Vec<usize> = (1000..1500).collect();
    let (train_set, test_set) = (data.subset(&train_idx)?, data.subset(&test_idx)?);

    let net = mlp(&[2, 16, 16, 2], 7)?;
    let float_cfg = TrainConfig {
        activation_bits: None,
        ..TrainConfig::default()
    };
    let mut admm_cfg = TrainConfig::default();
    if let [rho, growth, rho_max] = args[..] {
        admm_cfg.rho = rho;
        admm_cfg.rho_growth = growth;
        admm_cfg.rho_max = rho_max;
    }
    let t = std::time::Instant::now();
    let exp = run_experiment(&net, &train_set, &test_set, &float_cfg, &admm_cfg)?;
    let m = &exp.metrics;
    println!("float test accuracy      {:.2}%", 100.0 * m.float_test_acc);
    println!("4-bit MSP (shift engine) {:.2}%", 100.0 * m.quant_test_acc);
    println!("feasibility gap          {:.3e}", m.feasibility_gap);
    println!("engines agree            {}", m.engines_agree);
    for r in exp.quant.log.epochs.iter().step_by(15) {
        println!(
            "epoch {:>3} loss {:.4} penalty {:.3e} gap {:.3e} test {:.3}",
            r.epoch,
            r.task_loss,
            r.penalty.unwrap_or(0.0),
            r.feasibility_gap.unwrap_or(0.0),
            r.test_acc.unwrap_or(0.0)
        );
    }
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
