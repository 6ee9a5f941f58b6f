//! Assigns the rows of a random 20x64 weight matrix to SPoT, Fixed-4 and
//! Fixed-8 groups at the 65:30:5 ratio and reports per-group error.
//!
//! ```text
//! cargo run --example scheme_assignment
//! ```

use msp_quant::assign::{assign, project_matrix, row_stats, RowTag, SchemeConfig, SchemeRatio};
use msp_quant::network::WeightMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> msp_quant::Result<()> {
    let (rows, cols) = (20, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        // Row r has standard deviation 0.05 + 0.02 r.
        let sigma = 0.05 + 0.02 * r as f64;
        let n = Normal::new(0.0, sigma).expect("valid sigma");
        data.extend((0..cols).map(|_| n.sample(&mut rng)));
    }
    let w = WeightMatrix::new(rows, cols, data)?;

    let config = SchemeConfig::default();
    let levels = config.levels()?;
    let stats = row_stats(&w, &levels.low)?;
    let mut map = assign(&w, &SchemeRatio::MSP, &stats)?;
    map.fit_alphas(&w, &levels, config.alpha);
    let (_, q) = project_matrix(&w, &map, &levels)?;

    println!("row  variance  fixed4-error  group   alpha");
    for r in 0..rows {
        println!(
            "{r:>3}  {:>8.5}  {:>12.6}  {:<6}  {:.4}",
            stats.variance[r],
            stats.error[r],
            map.tags[r].as_str(),
            map.alpha[r]
        );
    }
    let (ns, nf, n8) = map.counts();
    println!("\ncounts: spot {ns}, fixed4 {nf}, fixed8 {n8}; theta = {:?}", map.theta);
    for tag in RowTag::ALL {
        let idx: Vec<usize> = (0..rows).filter(|&r| map.tags[r] == tag).collect();
        let mse: f64 = idx
            .iter()
            .flat_map(|&r| w.row(r).iter().zip(q.row(r)).map(|(a, b)| (a - b).powi(2)))
            .sum::<f64>()
            / (idx.len().max(1) * cols) as f64;
        println!("group {:<2} mse {mse:.3e}", tag.as_str());
    }
    Ok(())
}
