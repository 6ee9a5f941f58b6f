use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{LevelSet, QuantScheme};

/// A quantized weight: `value == alpha * unit_level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantValue {
    pub value: f64,
    pub unit_level: f64,
    pub code: u32,
    pub alpha: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// Normalizes `w` by `alpha` and clips to `[-1, 1]`.
pub fn clip(w: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(if w < -alpha {
        -1.0
    } else if w > alpha {
        1.0
    } else {
        w / alpha
    })
}

impl LevelSet {
    /// Index of the level nearest to `x`; ties go to the smaller magnitude.
    pub fn nearest_index(&self, x: f64) -> usize {
        let levels = self.levels();
        let hi = levels.partition_point(|&l| l < x);
        if hi == 0 {
            return 0;
        }
        if hi == levels.len() {
            return levels.len() - 1;
        }
        let lo = hi - 1;
        let (d_lo, d_hi) = ((x - levels[lo]).abs(), (x - levels[hi]).abs());
        let mut best = if d_lo < d_hi {
            lo
        } else if d_hi < d_lo {
            hi
        } else if levels[lo].abs() <= levels[hi].abs() {
            lo
        } else {
            hi
        };
        let d = d_lo.min(d_hi);
        // Rounded distances can tie with levels beyond the immediate neighbours.
        let mut i = lo;
        while i > 0 && (x - levels[i - 1]).abs() == d {
            i -= 1;
            if levels[i].abs() < levels[best].abs() {
                best = i;
            }
        }
        let mut j = hi;
        while j + 1 < levels.len() && (x - levels[j + 1]).abs() == d {
            j += 1;
            if levels[j].abs() < levels[best].abs() {
                best = j;
            }
        }
        best
    }

    fn quant_value(&self, index: usize, alpha: f64) -> QuantValue {
        let unit_level = self.levels()[index];
        QuantValue {
            value: alpha * unit_level,
            unit_level,
            code: self.codes()[index],
            alpha,
        }
    }
}

/// Nearest-level projection of `clip(w, alpha)` onto the level set.
pub fn project_nearest(levels: &LevelSet, alpha: f64, w: f64) -> Result<QuantValue> {
    if !w.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    let x = clip(w, alpha)?;
    Ok(levels.quant_value(levels.nearest_index(x), alpha))
}

/// Log-domain PoT projection: the exponent is `round(log2 |clip(w, alpha)|)`
/// clamped to `[-(2^(m-1) - 2), 0]`. Magnitudes below the geometric midpoint
/// between zero's neighbour and the next level down (`2^-E * 2^-1/2`) map to zero.
pub fn project_pot_log(levels: &LevelSet, alpha: f64, w: f64) -> Result<QuantValue> {
    let QuantScheme::Pot { bits } = levels.scheme() else {
        return Err(Error::InvalidScheme(format!(
            "log-domain projection needs a PoT level set, got {}",
            levels.scheme()
        )));
    };
    if !w.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    let x = clip(w, alpha)?;
    let max_exp = (1i32 << (bits - 1)) - 2;
    let cutoff = f64::powi(2.0, -max_exp) * std::f64::consts::FRAC_1_SQRT_2;
    let unit = if x.abs() < cutoff {
        0.0
    } else {
        let e = x.abs().log2().round().clamp(-f64::from(max_exp), 0.0);
        x.signum() * f64::powi(2.0, e as i32)
    };
    let index = levels.level_index(unit).expect("PoT level by construction");
    Ok(levels.quant_value(index, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(s: &str) -> LevelSet {
        LevelSet::build(s.parse().unwrap()).unwrap()
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clip(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(clip(-3.0, 1.0).unwrap(), -1.0);
        assert_eq!(clip(0.6, 0.3).unwrap(), 1.0);
        assert!(clip(0.1, 0.0).is_err());
        assert!(clip(0.1, -1.0).is_err());
    }

    #[test]
    fn nearest_fixed4() {
        let l = set("fixed4");
        let q = project_nearest(&l, 1.0, 0.30).unwrap();
        assert_eq!(q.unit_level, 2.0 / 7.0);
        assert_eq!(project_nearest(&l, 1.0, 1.2).unwrap().value, 1.0);
        assert!(project_nearest(&l, 1.0, f64::NAN).is_err());
        assert!(project_nearest(&l, 0.0, 0.1).is_err());
    }

    #[test]
    fn nearest_is_idempotent() {
        let l = set("spot5:3:1");
        for &u in l.levels() {
            let q = project_nearest(&l, 0.8, 0.8 * u).unwrap();
            assert_eq!(q.unit_level, u);
        }
    }

    #[test]
    fn ties_go_to_smaller_magnitude() {
        let l = set("fixed2");
        assert_eq!(project_nearest(&l, 1.0, 0.5).unwrap().unit_level, 0.0);
        assert_eq!(project_nearest(&l, 1.0, -0.5).unwrap().unit_level, 0.0);
    }

    #[test]
    fn pot_log_projection() {
        let l = set("pot4");
        assert_eq!(project_pot_log(&l, 1.0, 0.7).unwrap().value, 0.5);
        assert_eq!(project_pot_log(&l, 1.0, 0.72).unwrap().value, 1.0);
        assert_eq!(project_nearest(&l, 1.0, 0.72).unwrap().value, 0.5);
        assert_eq!(project_pot_log(&l, 1.0, 0.0).unwrap().value, 0.0);
        assert_eq!(project_pot_log(&l, 1.0, -0.3).unwrap().value, -0.25);
        // smallest level 2^-6, cutoff 2^-6.5
        assert_eq!(project_pot_log(&l, 1.0, 0.0112).unwrap().value, 0.015625);
        assert_eq!(project_pot_log(&l, 1.0, 0.0108).unwrap().value, 0.0);
        assert!(project_pot_log(&set("fixed4"), 1.0, 0.3).is_err());
    }
}
