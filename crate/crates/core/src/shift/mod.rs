//! Bit-exact integer inference.
//!
//! Activations are unsigned codes on a per-layer grid. Each GEMM row runs on
//! one datapath: shift-path rows (SPoT or PoT) accumulate `a << (S - e)` terms
//! in a frame with `S` fractional bits, fixed-point rows accumulate `a * k`.
//! Either way the inner loop is pure `i64` arithmetic and the row is scaled
//! to float exactly once at the end.

mod engine;

pub use engine::{compare_engines, infer, infer_with_dump, EngineComparison, InferenceResult, LayerChecksum};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assign::{QuantizedLayer, RowTag, SchemeLevels};
use crate::error::{Error, Result};
use crate::network::WeightMatrix;
use crate::ops::matmul;
use crate::quant::LevelSet;

/// An activation code with its layer's grid step `s_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActCode {
    pub code: u32,
    pub scale: f64,
}

impl ActCode {
    pub fn decode(&self) -> f64 {
        f64::from(self.code) * self.scale
    }
}

/// Largest shift frame accepted by the integer path.
pub const MAX_FRAME_BITS: u32 = 40;

/// A shift-path weight: `±(2^-p + 2^-q)` with either term possibly absent,
/// held as left-shift amounts `S - p`, `S - q` in a frame of `S` fractional bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpotWeightCode {
    pub negative: bool,
    pub p: Option<u32>,
    pub q: Option<u32>,
    pub frame: u32,
}

impl SpotWeightCode {
    pub fn from_code(levels: &LevelSet, code: u32) -> Result<Self> {
        let frame = levels.frame_bits().ok_or_else(|| {
            Error::InvalidScheme(format!("{} has no shift datapath", levels.scheme()))
        })?;
        if frame > MAX_FRAME_BITS {
            return Err(Error::InvalidScheme(format!(
                "{} needs a {frame}-bit shift frame, limit is {MAX_FRAME_BITS}",
                levels.scheme()
            )));
        }
        let t = levels.shift_terms(code)?;
        Ok(Self {
            negative: t.negative,
            p: t.first,
            q: t.second,
            frame,
        })
    }

    /// Signed integer numerator in the frame: `raw_level * 2^S`.
    pub fn raw_numerator(&self) -> i64 {
        let mag: i64 = [self.p, self.q]
            .into_iter()
            .flatten()
            .map(|e| 1i64 << (self.frame - e))
            .sum();
        if self.negative {
            -mag
        } else {
            mag
        }
    }
}

/// `±[(a << (S - p)) + (a << (S - q))]`, equal to `a * raw_numerator` by construction.
pub fn spot_mac(a: u32, w: &SpotWeightCode) -> i64 {
    let a = i64::from(a);
    let mut v = 0i64;
    if let Some(p) = w.p {
        v += a << (w.frame - p);
    }
    if let Some(q) = w.q {
        v += a << (w.frame - q);
    }
    if w.negative {
        -v
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    FloatRef,
    Shift,
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float_ref" | "float" => Ok(Engine::FloatRef),
            "shift" => Ok(Engine::Shift),
            other => Err(Error::Config(format!("unknown engine {other:?} (expected shift or float_ref)"))),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::FloatRef => "float_ref",
            Engine::Shift => "shift",
        })
    }
}

/// Datapath of one GEMM row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowPath {
    /// Shift-add over the weight's power-of-two terms.
    Shift,
    /// Integer multiply by the fixed-point integer.
    IntMultiply,
    /// Float multiply by the decoded weight.
    DecodedFloat,
}

pub fn default_path(tag: RowTag) -> RowPath {
    match tag {
        RowTag::Spot => RowPath::Shift,
        RowTag::Fixed | RowTag::Eight => RowPath::IntMultiply,
    }
}

#[derive(Debug, Clone)]
enum RowKernel {
    /// Per weight: sign and up to two left-shift amounts.
    Shift(Vec<(bool, Option<u32>, Option<u32>)>),
    Int(Vec<i64>),
    Float(Vec<f64>),
}

/// A quantized layer decoded once into per-row integer kernels.
#[derive(Debug, Clone)]
pub struct PreparedLayer {
    rows: usize,
    cols: usize,
    kernels: Vec<RowKernel>,
    /// Multiplies the integer accumulator (times `s_a`) back to real units.
    row_scale: Vec<f64>,
}

impl PreparedLayer {
    pub fn new(layer: &QuantizedLayer, levels: &SchemeLevels) -> Result<Self> {
        let paths: Vec<RowPath> = layer.map.tags.iter().map(|&t| default_path(t)).collect();
        Self::with_paths(layer, levels, &paths)
    }

    pub fn with_paths(layer: &QuantizedLayer, levels: &SchemeLevels, paths: &[RowPath]) -> Result<Self> {
        if paths.len() != layer.rows || layer.codes.len() != layer.rows * layer.cols {
            return Err(Error::Shape("row paths or codes do not match the layer".into()));
        }
        let mut kernels = Vec::with_capacity(layer.rows);
        let mut row_scale = Vec::with_capacity(layer.rows);
        for r in 0..layer.rows {
            let l = levels.for_tag(layer.map.tags[r]);
            let alpha = layer.map.alpha[r];
            let codes = &layer.codes[r * layer.cols..(r + 1) * layer.cols];
            match paths[r] {
                RowPath::Shift => {
                    let terms = codes
                        .iter()
                        .map(|&c| {
                            let w = SpotWeightCode::from_code(l, c)?;
                            Ok((w.negative, w.p.map(|p| w.frame - p), w.q.map(|q| w.frame - q)))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let frame = l.frame_bits().expect("shift scheme");
                    row_scale.push(alpha / (l.n_raw() * f64::powi(2.0, frame as i32)));
                    kernels.push(RowKernel::Shift(terms));
                }
                RowPath::IntMultiply => {
                    let den = l.fixed_denominator().ok_or_else(|| {
                        Error::InvalidScheme(format!("{} rows cannot use the integer multiply path", l.scheme()))
                    })?;
                    let ints = codes.iter().map(|&c| l.fixed_integer(c)).collect::<Result<Vec<_>>>()?;
                    row_scale.push(alpha / den as f64);
                    kernels.push(RowKernel::Int(ints));
                }
                RowPath::DecodedFloat => {
                    let w = codes
                        .iter()
                        .map(|&c| Ok(alpha * l.decode(c)?))
                        .collect::<Result<Vec<_>>>()?;
                    row_scale.push(1.0);
                    kernels.push(RowKernel::Float(w));
                }
            }
        }
        Ok(Self {
            rows: layer.rows,
            cols: layer.cols,
            kernels,
            row_scale,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Worst-case accumulator width for `act_bits`-bit activations; errors past 63 bits.
    pub fn check_accumulator(&self, act_bits: u32) -> Result<u32> {
        let mut worst = 0u32;
        let fan_in_bits = usize::BITS - (self.cols.max(1) - 1).leading_zeros();
        for k in &self.kernels {
            let weight_bits = match k {
                RowKernel::Shift(t) => t
                    .iter()
                    .flat_map(|&(_, a, b)| a.into_iter().chain(b))
                    .max()
                    .map_or(0, |s| s + 2),
                RowKernel::Int(v) => {
                    let m = v.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0);
                    u64::BITS - m.leading_zeros()
                }
                RowKernel::Float(_) => 0,
            };
            worst = worst.max(act_bits + weight_bits + fan_in_bits + 1);
        }
        if worst > 63 {
            return Err(Error::AccumulatorOverflow { bits: worst });
        }
        Ok(worst)
    }

    /// `out[r, j] = sum_k w[r, k] * a[k, j] * s_a` for activation codes `a: [cols, n]`.
    pub fn gemm(&self, acts: &[u32], n: usize, act_scale: f64) -> Result<Vec<f64>> {
        if acts.len() != self.cols * n {
            return Err(Error::Shape(format!(
                "activation matrix has {} codes, expected {}x{n}",
                acts.len(),
                self.cols
            )));
        }
        let mut out = vec![0.0; self.rows * n];
        let mut acc = vec![0i64; n];
        for (r, kernel) in self.kernels.iter().enumerate() {
            let orow = &mut out[r * n..(r + 1) * n];
            match kernel {
                RowKernel::Shift(terms) => {
                    acc.iter_mut().for_each(|a| *a = 0);
                    for (k, &(neg, s1, s2)) in terms.iter().enumerate() {
                        if s1.is_none() && s2.is_none() {
                            continue;
                        }
                        for (a, &x) in acc.iter_mut().zip(&acts[k * n..(k + 1) * n]) {
                            let x = i64::from(x);
                            let mut v = 0;
                            if let Some(s) = s1 {
                                v += x << s;
                            }
                            if let Some(s) = s2 {
                                v += x << s;
                            }
                            if neg {
                                *a -= v;
                            } else {
                                *a += v;
                            }
                        }
                    }
                    let scale = self.row_scale[r] * act_scale;
                    orow.iter_mut().zip(&acc).for_each(|(o, &a)| *o = a as f64 * scale);
                }
                RowKernel::Int(ints) => {
                    acc.iter_mut().for_each(|a| *a = 0);
                    for (k, &w) in ints.iter().enumerate() {
                        if w == 0 {
                            continue;
                        }
                        for (a, &x) in acc.iter_mut().zip(&acts[k * n..(k + 1) * n]) {
                            *a += w * i64::from(x);
                        }
                    }
                    let scale = self.row_scale[r] * act_scale;
                    orow.iter_mut().zip(&acc).for_each(|(o, &a)| *o = a as f64 * scale);
                }
                RowKernel::Float(w) => {
                    for (k, &wv) in w.iter().enumerate() {
                        for (o, &x) in orow.iter_mut().zip(&acts[k * n..(k + 1) * n]) {
                            *o += wv * (f64::from(x) * act_scale);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Mixed-datapath GEMM of a quantized layer over activation codes `[cols, n]`.
pub fn hetero_gemm(
    acts: &[u32],
    n: usize,
    act_scale: f64,
    layer: &QuantizedLayer,
    levels: &SchemeLevels,
) -> Result<Vec<f64>> {
    PreparedLayer::new(layer, levels)?.gemm(acts, n, act_scale)
}

/// Float GEMM over decoded weights and decoded activations.
pub fn reference_gemm(acts: &[u32], n: usize, act_scale: f64, weights: &WeightMatrix) -> Result<Vec<f64>> {
    if acts.len() != weights.cols * n {
        return Err(Error::Shape("activation matrix does not match weight columns".into()));
    }
    let a: Vec<f64> = acts.iter().map(|&c| f64::from(c) * act_scale).collect();
    Ok(matmul(&weights.data, &a, weights.rows, weights.cols, n))
}

/// `sum_k |w[r, k] * a[k, j]|`: the error scale for comparing GEMM outputs.
pub fn magnitude_gemm(acts: &[u32], n: usize, act_scale: f64, weights: &WeightMatrix) -> Vec<f64> {
    let a: Vec<f64> = acts.iter().map(|&c| f64::from(c) * act_scale).collect();
    let w: Vec<f64> = weights.data.iter().map(|v| v.abs()).collect();
    matmul(&w, &a, weights.rows, weights.cols, n)
}

/// `|a - b| / max(|a|, |b|, scale)`, zero when both sides are zero.
pub fn relative_diff(a: f64, b: f64, scale: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(b.abs()).max(scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::{SchemeConfig, SchemeMap, SchemeRatio};

    #[test]
    fn worked_shift_example() {
        let l = LevelSet::build("spot6:3:2".parse().unwrap()).unwrap();
        let code = l.encode(0.625 / l.n_raw()).unwrap();
        let w = SpotWeightCode::from_code(&l, code).unwrap();
        // frame 7: 0.625 * 2^7 = 80
        assert_eq!(w.raw_numerator(), 80);
        assert_eq!(spot_mac(5, &w), 400);
        // the same weight in the smallest frame that holds it: (5 << 2) + (5 << 0)
        let narrow = SpotWeightCode { frame: 3, ..w };
        assert_eq!(spot_mac(5, &narrow), 25);
        assert_eq!(narrow.raw_numerator(), 5);
    }

    #[test]
    fn zero_activation_is_zero() {
        let l = LevelSet::build("spot4:2:1".parse().unwrap()).unwrap();
        for code in 0..16 {
            assert_eq!(spot_mac(0, &SpotWeightCode::from_code(&l, code).unwrap()), 0);
        }
    }

    fn layer(tags: Vec<RowTag>, cols: usize, codes: Vec<u32>, alpha: Vec<f64>) -> QuantizedLayer {
        QuantizedLayer {
            index: 0,
            rows: tags.len(),
            cols,
            map: SchemeMap {
                tags,
                alpha,
                ratio: SchemeRatio::MSP,
                theta: None,
            },
            codes,
            activation: None,
        }
    }

    #[test]
    fn permutation_layer_is_exact() {
        let levels = SchemeConfig::default().levels().unwrap();
        let one = levels.low.encode(1.0).unwrap();
        let codes = vec![0, one, one, 0];
        let q = layer(vec![RowTag::Fixed, RowTag::Fixed], 2, codes, vec![1.0, 1.0]);
        let out = hetero_gemm(&[3, 9], 1, 0.5, &q, &levels).unwrap();
        assert_eq!(out, vec![4.5, 1.5]);
        let zeros = hetero_gemm(&[0, 0], 1, 0.5, &q, &levels).unwrap();
        assert_eq!(zeros, vec![0.0, 0.0]);
    }

    #[test]
    fn overflow_bound() {
        let levels = SchemeConfig::default().levels().unwrap();
        let q = layer(vec![RowTag::Spot], 4, vec![1, 2, 3, 4], vec![1.0]);
        let p = PreparedLayer::new(&q, &levels).unwrap();
        assert!(p.check_accumulator(4).unwrap() < 20);
        let fixed8 = levels.high.encode(1.0).unwrap();
        let big = layer(vec![RowTag::Eight], 1 << 20, vec![fixed8; 1 << 20], vec![1.0]);
        let bits = PreparedLayer::new(&big, &levels).unwrap().check_accumulator(16).unwrap();
        assert!(bits <= 63);
    }
}
