use serde::{Deserialize, Serialize};

use crate::quant::LevelSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    #[default]
    MaxAbs,
    LeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaGranularity {
    PerLayer,
    #[default]
    PerRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AlphaPolicy {
    pub mode: AlphaMode,
    pub granularity: AlphaGranularity,
}

impl AlphaPolicy {
    pub const MAX_ABS: Self = Self {
        mode: AlphaMode::MaxAbs,
        granularity: AlphaGranularity::PerRow,
    };
    pub const LEAST_SQUARES: Self = Self {
        mode: AlphaMode::LeastSquares,
        granularity: AlphaGranularity::PerRow,
    };
}

const LS_MAX_ITERS: usize = 20;

pub fn max_abs_alpha(values: &[f64]) -> f64 {
    let m = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Scaling factor for one row under `policy.mode`. All-zero rows get 1.
pub fn fit_alpha(row: &[f64], levels: &LevelSet, policy: AlphaPolicy) -> f64 {
    fit_alpha_groups(&[(row, levels)], policy.mode)
}

/// One shared scaling factor over several rows, each with its own level set.
///
/// Least squares alternates nearest-level projection with the closed-form
/// `alpha = <w, q> / <q, q>`, starting from max-abs, for at most 20 rounds.
/// Neither step increases the squared reconstruction error.
pub fn fit_alpha_groups(groups: &[(&[f64], &LevelSet)], mode: AlphaMode) -> f64 {
    let max_abs = groups
        .iter()
        .map(|(row, _)| max_abs_alpha(row))
        .fold(0.0f64, f64::max);
    let all_zero = groups.iter().all(|(row, _)| row.iter().all(|&v| v == 0.0));
    if all_zero || max_abs <= 0.0 {
        return 1.0;
    }
    match mode {
        AlphaMode::MaxAbs => max_abs,
        AlphaMode::LeastSquares => {
            let mut alpha = max_abs;
            let mut best = (sq_error(groups, alpha), alpha);
            for _ in 0..LS_MAX_ITERS {
                let (mut wq, mut qq) = (0.0, 0.0);
                for (row, levels) in groups {
                    for &w in *row {
                        let q = levels.levels()[levels.nearest_index(clip_unit(w, alpha))];
                        wq += w * q;
                        qq += q * q;
                    }
                }
                if qq == 0.0 {
                    break;
                }
                let next = wq / qq;
                if !(next > 0.0 && next.is_finite()) || next == alpha {
                    break;
                }
                alpha = next;
                let err = sq_error(groups, alpha);
                if err < best.0 {
                    best = (err, alpha);
                }
            }
            best.1
        }
    }
}

fn clip_unit(w: f64, alpha: f64) -> f64 {
    (w / alpha).clamp(-1.0, 1.0)
}

fn sq_error(groups: &[(&[f64], &LevelSet)], alpha: f64) -> f64 {
    groups
        .iter()
        .flat_map(|(row, levels)| {
            row.iter().map(move |&w| {
                let q = levels.levels()[levels.nearest_index(clip_unit(w, alpha))];
                (w - alpha * q).powi(2)
            })
        })
        .sum()
}
