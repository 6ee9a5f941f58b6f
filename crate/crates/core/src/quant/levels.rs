//! Level sets and the m-bit codec for fixed-point, PoT and SPoT.
//!
//! Code layouts (MSB first):
//!
//! * fixed `m`: `[sign | k]`, unit level `±k / (2^(m-1) - 1)`
//! * PoT `m`:   `[sign | j]`, `j = 0` is zero, otherwise `±2^-(j-1)`
//! * SPoT:      `[sign | c1 (m1 bits) | c2 (m2 bits)]`, raw value
//!   `t1(c1) + t2(c2)` with `t1(0) = 0, t1(c) = 2^-c` and `t2(0) = 0, t2(c) = 2^-(c-1)`,
//!   normalized by `n_raw` (the largest raw sum) so the top level is 1.
//!
//! A set bit in the sign position means negative. Every code decodes; the
//! negative-zero code and duplicate SPoT sums decode to an existing level, and
//! [`LevelSet::encode`] always returns the smallest code of a level.

use crate::error::{Error, Result};
use crate::quant::QuantScheme;

/// Exponents of the power-of-two terms of a shift-path weight.
/// The value is `sign * sum(2^-e)` over the present terms (raw, before `n_raw`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftTerms {
    pub negative: bool,
    pub first: Option<u32>,
    pub second: Option<u32>,
}

impl ShiftTerms {
    /// Integer numerator in a frame with `frame_bits` fractional bits.
    pub fn numerator(&self, frame_bits: u32) -> u128 {
        [self.first, self.second]
            .into_iter()
            .flatten()
            .map(|e| 1u128 << (frame_bits - e))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    scheme: QuantScheme,
    levels: Vec<f64>,
    codes: Vec<u32>,
    decode_table: Vec<u32>,
    n_raw: f64,
}

impl LevelSet {
    pub fn build(scheme: QuantScheme) -> Result<Self> {
        let scheme = scheme.validated()?;
        let bits = scheme.bits();
        let n_raw = match scheme {
            QuantScheme::Spot { .. } => 1.5,
            _ => 1.0,
        };
        let mut entries: Vec<(f64, u32)> = (0..1u32 << bits)
            .map(|code| (unit_value(scheme, code, n_raw), code))
            .collect();
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut levels: Vec<f64> = Vec::new();
        let mut codes: Vec<u32> = Vec::new();
        let mut decode_table = vec![0u32; entries.len()];
        for &(v, code) in &entries {
            if levels.last() != Some(&v) {
                levels.push(v);
                codes.push(code);
            } else if code < *codes.last().unwrap() {
                *codes.last_mut().unwrap() = code;
            }
            decode_table[code as usize] = (levels.len() - 1) as u32;
        }
        Ok(Self {
            scheme,
            levels,
            codes,
            decode_table,
            n_raw,
        })
    }

    pub fn scheme(&self) -> QuantScheme {
        self.scheme
    }

    pub fn bits(&self) -> u32 {
        self.scheme.bits()
    }

    /// Sorted, distinct unit levels in `[-1, 1]`.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Canonical code of each level, parallel to [`levels`](Self::levels).
    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    /// Normalization constant: raw level = unit level * `n_raw`. 1 except for SPoT.
    pub fn n_raw(&self) -> f64 {
        self.n_raw
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level_index(&self, unit_level: f64) -> Option<usize> {
        let u = if unit_level == 0.0 { 0.0 } else { unit_level };
        self.levels
            .binary_search_by(|l| l.total_cmp(&u))
            .ok()
    }

    pub fn encode(&self, unit_level: f64) -> Result<u32> {
        self.level_index(unit_level)
            .map(|i| self.codes[i])
            .ok_or(Error::UnknownLevel(unit_level))
    }

    pub fn decode(&self, code: u32) -> Result<f64> {
        self.decode_table
            .get(code as usize)
            .map(|&i| self.levels[i as usize])
            .ok_or(Error::InvalidCode {
                code,
                bits: self.bits(),
            })
    }

    /// Index into [`levels`](Self::levels) of the level a code decodes to.
    pub fn decode_index(&self, code: u32) -> Result<usize> {
        self.decode_table
            .get(code as usize)
            .map(|&i| i as usize)
            .ok_or(Error::InvalidCode {
                code,
                bits: self.bits(),
            })
    }

    /// Fixed-point integer `±k` of a code (`unit = k / (2^(m-1) - 1)`).
    pub fn fixed_integer(&self, code: u32) -> Result<i64> {
        let QuantScheme::Fixed { bits } = self.scheme else {
            return Err(Error::InvalidScheme(format!("{} is not fixed-point", self.scheme)));
        };
        self.decode(code)?;
        let mag = i64::from(code & ((1 << (bits - 1)) - 1));
        Ok(if code >> (bits - 1) == 1 { -mag } else { mag })
    }

    /// `2^(m-1) - 1` for fixed-point.
    pub fn fixed_denominator(&self) -> Option<i64> {
        match self.scheme {
            QuantScheme::Fixed { bits } => Some((1i64 << (bits - 1)) - 1),
            _ => None,
        }
    }

    /// Fractional bits of the integer frame in which every shift-path level is an
    /// exact integer: `2^m1 - 1` for SPoT, `2^(m-1) - 2` for PoT.
    pub fn frame_bits(&self) -> Option<u32> {
        match self.scheme {
            QuantScheme::Spot { m1, .. } => Some((1 << m1) - 1),
            QuantScheme::Pot { bits } => Some((1 << (bits - 1)) - 2),
            QuantScheme::Fixed { .. } => None,
        }
    }

    pub fn shift_terms(&self, code: u32) -> Result<ShiftTerms> {
        self.decode(code)?;
        let bits = self.bits();
        let negative = code >> (bits - 1) == 1 && self.decode(code)? != 0.0;
        match self.scheme {
            QuantScheme::Spot { m2, .. } => {
                let c1 = (code >> m2) & ((1 << (bits - 1 - m2)) - 1);
                let c2 = code & ((1 << m2) - 1);
                Ok(ShiftTerms {
                    negative,
                    first: (c1 > 0).then_some(c1),
                    second: (c2 > 0).then(|| c2 - 1),
                })
            }
            QuantScheme::Pot { bits } => {
                let j = code & ((1 << (bits - 1)) - 1);
                Ok(ShiftTerms {
                    negative,
                    first: (j > 0).then(|| j - 1),
                    second: None,
                })
            }
            QuantScheme::Fixed { .. } => Err(Error::InvalidScheme(format!(
                "{} has no shift decomposition",
                self.scheme
            ))),
        }
    }
}

fn pow2_neg(e: u32) -> f64 {
    f64::powi(2.0, -(e as i32))
}

fn unit_value(scheme: QuantScheme, code: u32, n_raw: f64) -> f64 {
    let bits = scheme.bits();
    let sign = if code >> (bits - 1) == 1 { -1.0 } else { 1.0 };
    let body = code & ((1 << (bits - 1)) - 1);
    let mag = match scheme {
        QuantScheme::Fixed { .. } => f64::from(body) / f64::from((1u32 << (bits - 1)) - 1),
        QuantScheme::Pot { .. } => {
            if body == 0 {
                0.0
            } else {
                pow2_neg(body - 1)
            }
        }
        QuantScheme::Spot { m1, m2, .. } => {
            let frame = (1u32 << m1) - 1;
            let c1 = body >> m2;
            let c2 = body & ((1 << m2) - 1);
            let num = (if c1 > 0 { 1u128 << (frame - c1) } else { 0 })
                + (if c2 > 0 { 1u128 << (frame - (c2 - 1)) } else { 0 });
            num as f64 * pow2_neg(frame) / n_raw
        }
    };
    if mag == 0.0 {
        0.0
    } else {
        sign * mag
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(s: &str) -> LevelSet {
        LevelSet::build(s.parse().unwrap()).unwrap()
    }

    #[test]
    fn fixed2_is_ternary() {
        let l = set("fixed2");
        assert_eq!(l.levels(), &[-1.0, 0.0, 1.0]);
        let mut codes = l.codes().to_vec();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), 3);
        for &c in l.codes() {
            assert_eq!(l.encode(l.decode(c).unwrap()).unwrap(), c);
        }
    }

    #[test]
    fn pot3_levels() {
        assert_eq!(set("pot3").levels(), &[-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn spot6_contains_0625() {
        let l = set("spot6:3:2");
        let unit = 0.625 / l.n_raw();
        let code = l.encode(unit).unwrap();
        // sign 0 | m1 "011" | m2 "10"
        assert_eq!(code, 0b0_011_10);
        let t = l.shift_terms(code).unwrap();
        assert_eq!((t.first, t.second), (Some(3), Some(1)));
        assert_eq!(l.decode(0b1_011_10).unwrap(), -unit);
    }

    #[test]
    fn cardinalities() {
        for m in 2..=8 {
            assert_eq!(set(&format!("fixed{m}")).len(), (1 << m) - 1);
            assert_eq!(set(&format!("pot{m}")).len(), (1 << m) - 1);
            for (m1, m2) in QuantScheme::spot_splits(m) {
                assert!(set(&format!("spot{m}:{m1}:{m2}")).len() < 1 << m);
            }
        }
    }

    #[test]
    fn level_set_shape() {
        for s in ["fixed4", "pot5", "spot4:2:1", "spot8:6:1"] {
            let l = set(s);
            let v = l.levels();
            assert!(v.windows(2).all(|w| w[0] < w[1]), "{s} not strictly sorted");
            assert_eq!(v[0], -1.0);
            assert_eq!(*v.last().unwrap(), 1.0);
            assert!(l.level_index(0.0).is_some());
            for x in v {
                assert!(l.level_index(-x).is_some(), "{s} not symmetric");
            }
        }
    }

    #[test]
    fn negative_zero_decodes_to_zero() {
        let l = set("fixed4");
        assert_eq!(l.decode(0b1000).unwrap(), 0.0);
        assert_eq!(l.encode(-0.0).unwrap(), 0);
        assert!(l.decode(16).is_err());
        assert!(l.encode(0.3).is_err());
    }

    #[test]
    fn fixed_integers() {
        let l = set("fixed4");
        assert_eq!(l.fixed_integer(0b0011).unwrap(), 3);
        assert_eq!(l.fixed_integer(0b1111).unwrap(), -7);
        assert_eq!(l.fixed_denominator(), Some(7));
    }
}
