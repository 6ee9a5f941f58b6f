use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unsigned uniform activation grid `{0, 1, ..., 2^bits - 1} * a_max / (2^bits - 1)`
/// with a straight-through gradient inside `[0, a_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationQuantizer {
    pub bits: u32,
    pub a_max: f64,
}

pub const MAX_ACTIVATION_BITS: u32 = 16;

impl ActivationQuantizer {
    pub fn new(bits: u32, a_max: f64) -> Result<Self> {
        if bits == 0 || bits > MAX_ACTIVATION_BITS {
            return Err(Error::Config(format!("activation bits must be in 1..=16, got {bits}")));
        }
        if !(a_max > 0.0 && a_max.is_finite()) {
            return Err(Error::Config(format!("activation clip must be positive, got {a_max}")));
        }
        Ok(Self { bits, a_max })
    }

    pub fn max_code(&self) -> u32 {
        (1 << self.bits) - 1
    }

    /// Grid step `s_a`.
    pub fn scale(&self) -> f64 {
        self.a_max / f64::from(self.max_code())
    }

    pub fn code(&self, a: f64) -> u32 {
        let x = a.clamp(0.0, self.a_max);
        // NaN clamps to NaN and casts to 0.
        ((x / self.scale()).round() as u32).min(self.max_code())
    }

    pub fn decode(&self, code: u32) -> f64 {
        f64::from(code) * self.scale()
    }

    /// Forward pass: the grid value nearest to `clip(a, 0, a_max)`.
    pub fn quantize(&self, a: f64) -> f64 {
        self.decode(self.code(a))
    }

    /// Backward mask: 1 inside the clip range, 0 outside.
    pub fn grad_mask(&self, a: f64) -> f64 {
        if (0.0..=self.a_max).contains(&a) {
            1.0
        } else {
            0.0
        }
    }
}

/// Forward values and backward masks for a whole tensor.
pub fn ste_activation(q: &ActivationQuantizer, a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    a.iter().map(|&x| (q.quantize(x), q.grad_mask(x))).unzip()
}

/// Nearest-rank percentile (`p` in `[0, 100]`) of the finite values.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64 - 1e-9).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

pub const CALIBRATION_PERCENTILE: f64 = 99.9;

/// Clip value for a layer input: the 99.9th percentile, falling back to the
/// maximum and then to 1 when the values are not positive.
pub fn calibrate_a_max(values: &[f64]) -> f64 {
    let p = percentile(values, CALIBRATION_PERCENTILE).unwrap_or(0.0);
    if p > 0.0 {
        return p;
    }
    let m = values.iter().copied().filter(|x| x.is_finite()).fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_examples() {
        let q = ActivationQuantizer::new(4, 1.0).unwrap();
        assert_eq!(q.quantize(0.0), 0.0);
        assert_eq!(q.grad_mask(0.0), 1.0);
        assert_eq!(q.quantize(0.5), 8.0 / 15.0);
        assert_eq!(q.quantize(2.0), 1.0);
        assert_eq!(q.grad_mask(2.0), 0.0);
        assert_eq!(q.quantize(-0.3), 0.0);
        assert_eq!(q.grad_mask(-0.3), 0.0);
    }

    #[test]
    fn decode_matches_forward() {
        let q = ActivationQuantizer::new(4, 0.73).unwrap();
        for i in 0..200 {
            let a = i as f64 * 0.005;
            assert_eq!(q.decode(q.code(a)), q.quantize(a));
        }
    }

    #[test]
    fn percentile_rank() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.9), Some(999.0));
        assert_eq!(percentile(&v, 100.0), Some(1000.0));
        assert_eq!(calibrate_a_max(&[0.0, 0.0]), 1.0);
        assert_eq!(calibrate_a_max(&[-1.0, -2.0]), 1.0);
    }
}
