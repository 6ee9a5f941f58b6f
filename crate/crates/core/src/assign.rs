//! Intra-layer scheme assignment.
//!
//! Each quantizable layer is viewed as a GEMM matrix whose rows are split into
//! three groups: Fixed-8 rows (the rows with the largest 4-bit quantization
//! error), then, among the rest, SPoT rows (smallest variance) and Fixed-4 rows.
//! Group sizes come from a hardware-derived [`SchemeRatio`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{reshape_to_gemm, NetworkIR, WeightMatrix};
use crate::quant::{
    fit_alpha_groups, max_abs_alpha, project_nearest, AlphaGranularity, AlphaPolicy, LevelSet,
    QuantScheme,
};
use crate::train::ActivationQuantizer;

/// Share of rows per group. Fractions are non-negative and sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeRatio {
    pub spot: f64,
    pub fixed: f64,
    pub eight: f64,
}

impl SchemeRatio {
    pub const MSP: Self = Self {
        spot: 0.65,
        fixed: 0.30,
        eight: 0.05,
    };

    pub fn new(spot: f64, fixed: f64, eight: f64) -> Result<Self> {
        let r = Self { spot, fixed, eight };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.spot, self.fixed, self.eight];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidRatio(format!("negative or non-finite share in {self}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidRatio(format!("shares sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Integer triple `spot:fixed:eight` that sums to 100.
    pub fn from_percent(spot: u32, fixed: u32, eight: u32) -> Result<Self> {
        let sum = spot + fixed + eight;
        if sum != 100 {
            return Err(Error::InvalidRatio(format!(
                "{spot}:{fixed}:{eight} sums to {sum}, expected 100"
            )));
        }
        Self::new(
            f64::from(spot) / 100.0,
            f64::from(fixed) / 100.0,
            f64::from(eight) / 100.0,
        )
    }

    pub fn dsp_share(&self) -> f64 {
        self.fixed + self.eight
    }
}

impl FromStr for SchemeRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<u32> = s
            .split(':')
            .map(|p| p.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidRatio(format!("expected integers like 65:30:5, got {s:?}")))?;
        match parts.as_slice() {
            [a, b, c] => Self::from_percent(*a, *b, *c),
            _ => Err(Error::InvalidRatio(format!("expected three fields, got {s:?}"))),
        }
    }
}

impl fmt::Display for SchemeRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |x: f64| {
            let p = x * 100.0;
            if (p - p.round()).abs() < 1e-9 {
                format!("{}", p.round() as i64)
            } else {
                format!("{p:.1}")
            }
        };
        write!(f, "{}:{}:{}", pct(self.spot), pct(self.fixed), pct(self.eight))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowTag {
    #[serde(rename = "s")]
    Spot,
    #[serde(rename = "f")]
    Fixed,
    #[serde(rename = "8")]
    Eight,
}

impl RowTag {
    pub const ALL: [RowTag; 3] = [RowTag::Spot, RowTag::Fixed, RowTag::Eight];

    pub fn as_str(&self) -> &'static str {
        match self {
            RowTag::Spot => "s",
            RowTag::Fixed => "f",
            RowTag::Eight => "8",
        }
    }
}

/// Which concrete scheme each row group uses, and how `alpha` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    /// Shift-path scheme for `s` rows: SPoT, or PoT for single-shift ablations.
    pub lut: QuantScheme,
    pub low_bits: u32,
    pub high_bits: u32,
    pub alpha: AlphaPolicy,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            lut: QuantScheme::Spot {
                bits: 4,
                m1: 2,
                m2: 1,
            },
            low_bits: 4,
            high_bits: 8,
            alpha: AlphaPolicy::MAX_ABS,
        }
    }
}

impl SchemeConfig {
    pub fn levels(&self) -> Result<SchemeLevels> {
        if !self.lut.is_shift() {
            return Err(Error::InvalidScheme(format!(
                "row group `s` needs a shift scheme, got {}",
                self.lut
            )));
        }
        Ok(SchemeLevels {
            lut: LevelSet::build(self.lut)?,
            low: LevelSet::build(QuantScheme::fixed(self.low_bits)?)?,
            high: LevelSet::build(QuantScheme::fixed(self.high_bits)?)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeLevels {
    pub lut: LevelSet,
    pub low: LevelSet,
    pub high: LevelSet,
}

impl SchemeLevels {
    pub fn for_tag(&self, tag: RowTag) -> &LevelSet {
        match tag {
            RowTag::Spot => &self.lut,
            RowTag::Fixed => &self.low,
            RowTag::Eight => &self.high,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowStats {
    /// Population variance per row.
    pub variance: Vec<f64>,
    /// Mean absolute error per row against the low-bit fixed grid at max-abs alpha.
    pub error: Vec<f64>,
}

pub fn row_stats(w: &WeightMatrix, fixed_levels: &LevelSet) -> Result<RowStats> {
    let mut variance = Vec::with_capacity(w.rows);
    let mut error = Vec::with_capacity(w.rows);
    for row in w.rows_iter() {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        variance.push(row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n);
        let alpha = max_abs_alpha(row);
        let mut err = 0.0;
        for &v in row {
            err += (v - project_nearest(fixed_levels, alpha, v)?.value).abs();
        }
        error.push(err / n);
    }
    Ok(RowStats { variance, error })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeMap {
    pub tags: Vec<RowTag>,
    pub alpha: Vec<f64>,
    pub ratio: SchemeRatio,
    /// Largest variance among SPoT rows; `None` when there are none.
    pub theta: Option<f64>,
}

impl SchemeMap {
    pub fn rows(&self) -> usize {
        self.tags.len()
    }

    pub fn count(&self, tag: RowTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }

    /// `(spot, fixed, eight)` row counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.count(RowTag::Spot),
            self.count(RowTag::Fixed),
            self.count(RowTag::Eight),
        )
    }

    /// Refit every row's scaling factor for its assigned level set.
    pub fn fit_alphas(&mut self, w: &WeightMatrix, levels: &SchemeLevels, policy: AlphaPolicy) {
        match policy.granularity {
            AlphaGranularity::PerRow => {
                for (r, row) in w.rows_iter().enumerate() {
                    let l = levels.for_tag(self.tags[r]);
                    self.alpha[r] = fit_alpha_groups(&[(row, l)], policy.mode);
                }
            }
            AlphaGranularity::PerLayer => {
                let groups: Vec<(&[f64], &LevelSet)> = w
                    .rows_iter()
                    .zip(&self.tags)
                    .map(|(row, &t)| (row, levels.for_tag(t)))
                    .collect();
                let a = fit_alpha_groups(&groups, policy.mode);
                self.alpha.iter_mut().for_each(|x| *x = a);
            }
        }
    }
}

fn round_half_up(x: f64) -> usize {
    // Absorb representation error in products like 0.35 * 10.
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Row counts `(spot, fixed, eight)` for `rows` rows.
///
/// Eight-bit first, then SPoT, each rounded half-up and raised to one row when
/// its share is nonzero; Fixed-4 takes the remainder. When a nonzero fixed share
/// would end up empty and enough rows exist, one row moves back from SPoT (or,
/// failing that, from the eight-bit group).
pub fn target_counts(rows: usize, ratio: &SchemeRatio) -> (usize, usize, usize) {
    let r = rows as f64;
    let mut n8 = round_half_up(ratio.eight * r);
    if ratio.eight > 0.0 {
        n8 = n8.max(1);
    }
    n8 = n8.min(rows);
    let mut ns = round_half_up(ratio.spot * r);
    if ratio.spot > 0.0 {
        ns = ns.max(1);
    }
    ns = ns.min(rows - n8);
    let mut nf = rows - n8 - ns;
    let groups = [ratio.spot, ratio.fixed, ratio.eight]
        .iter()
        .filter(|&&x| x > 0.0)
        .count();
    if ratio.fixed > 0.0 && nf == 0 && rows >= groups {
        if ns > 1 {
            ns -= 1;
            nf += 1;
        } else if n8 > 1 {
            n8 -= 1;
            nf += 1;
        }
    }
    (ns, nf, n8)
}

/// Order of `keys` ascending (or descending), ties by lower row index.
fn ranked(keys: &[f64], candidates: &[usize], descending: bool) -> Vec<usize> {
    let mut idx = candidates.to_vec();
    idx.sort_by(|&a, &b| {
        let ord = keys[a].total_cmp(&keys[b]);
        let ord = if descending { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    idx
}

pub fn assign(w: &WeightMatrix, ratio: &SchemeRatio, stats: &RowStats) -> Result<SchemeMap> {
    ratio.validate()?;
    let rows = w.rows;
    if rows == 0 {
        return Err(Error::Shape("cannot assign schemes to an empty matrix".into()));
    }
    if stats.variance.len() != rows || stats.error.len() != rows {
        return Err(Error::Shape(format!(
            "row stats cover {} rows, matrix has {rows}",
            stats.variance.len()
        )));
    }
    let (ns, _, n8) = target_counts(rows, ratio);
    let mut tags = vec![RowTag::Fixed; rows];

    let all: Vec<usize> = (0..rows).collect();
    let by_error = ranked(&stats.error, &all, true);
    for &r in &by_error[..n8] {
        tags[r] = RowTag::Eight;
    }
    let rest: Vec<usize> = all.iter().copied().filter(|&r| tags[r] != RowTag::Eight).collect();
    let by_var = ranked(&stats.variance, &rest, false);
    for &r in &by_var[..ns] {
        tags[r] = RowTag::Spot;
    }
    let theta = by_var[..ns]
        .iter()
        .map(|&r| stats.variance[r])
        .reduce(f64::max);
    let alpha = w.rows_iter().map(max_abs_alpha).collect();
    Ok(SchemeMap {
        tags,
        alpha,
        ratio: *ratio,
        theta,
    })
}

/// Row-wise projection under a scheme map: returns codes and the dequantized matrix.
pub fn project_matrix(
    w: &WeightMatrix,
    map: &SchemeMap,
    levels: &SchemeLevels,
) -> Result<(Vec<u32>, WeightMatrix)> {
    let mut codes = Vec::with_capacity(w.data.len());
    let mut out = Vec::with_capacity(w.data.len());
    for (r, row) in w.rows_iter().enumerate() {
        let l = levels.for_tag(map.tags[r]);
        for &v in row {
            let q = project_nearest(l, map.alpha[r], v)?;
            codes.push(q.code);
            out.push(q.value);
        }
    }
    Ok((codes, WeightMatrix::new(w.rows, w.cols, out)?))
}

/// Largest distance from any weight to its row's projection.
pub fn feasibility_gap(w: &WeightMatrix, map: &SchemeMap, levels: &SchemeLevels) -> Result<f64> {
    let (_, p) = project_matrix(w, map, levels)?;
    Ok(w.data
        .iter()
        .zip(&p.data)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    /// Index of the layer in the network.
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
    pub map: SchemeMap,
    /// Row-major `[rows, cols]` codes; each row uses its tag's level set.
    pub codes: Vec<u32>,
    /// Quantizer for this layer's input activations, once calibrated.
    pub activation: Option<ActivationQuantizer>,
}

impl QuantizedLayer {
    pub fn row_bits(&self, levels: &SchemeLevels) -> Vec<u32> {
        self.map.tags.iter().map(|&t| levels.for_tag(t).bits()).collect()
    }

    pub fn dequantized(&self, levels: &SchemeLevels) -> Result<WeightMatrix> {
        let mut data = Vec::with_capacity(self.codes.len());
        for r in 0..self.rows {
            let l = levels.for_tag(self.map.tags[r]);
            for &c in &self.codes[r * self.cols..(r + 1) * self.cols] {
                data.push(self.map.alpha[r] * l.decode(c)?);
            }
        }
        WeightMatrix::new(self.rows, self.cols, data)
    }
}

/// A network whose quantizable layers carry codes and scheme maps. The
/// embedded `net` holds the dequantized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub net: NetworkIR,
    pub config: SchemeConfig,
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedModel {
    pub fn levels(&self) -> Result<SchemeLevels> {
        self.config.levels()
    }

    /// Every quantized layer has an input activation quantizer.
    pub fn is_finalized(&self) -> bool {
        !self.layers.is_empty() && self.layers.iter().all(|l| l.activation.is_some())
    }

    pub fn layer_for(&self, index: usize) -> Option<&QuantizedLayer> {
        self.layers.iter().find(|l| l.index == index)
    }

    /// Rebuild a model from codes, re-deriving the dequantized weights.
    pub fn from_parts(mut net: NetworkIR, config: SchemeConfig, layers: Vec<QuantizedLayer>) -> Result<Self> {
        let levels = config.levels()?;
        for ql in &layers {
            let expected = reshape_to_gemm(
                net.layers()
                    .get(ql.index)
                    .ok_or_else(|| Error::Shape(format!("no layer {}", ql.index)))?,
            )?;
            if (expected.rows, expected.cols) != (ql.rows, ql.cols)
                || ql.map.rows() != ql.rows
                || ql.map.alpha.len() != ql.rows
                || ql.codes.len() != ql.rows * ql.cols
            {
                return Err(Error::Shape(format!("quantized layer {} does not match network", ql.index)));
            }
            net.set_weight_matrix(ql.index, &ql.dequantized(&levels)?)?;
        }
        Ok(Self { net, config, layers })
    }
}

/// One-shot post-training quantization of every dense/conv layer, first and last included.
pub fn quantize_model(net: &NetworkIR, ratio: &SchemeRatio, config: &SchemeConfig) -> Result<QuantizedModel> {
    ratio.validate()?;
    let levels = config.levels()?;
    let indices = net.quantizable_indices();
    if indices.is_empty() {
        return Err(Error::NotQuantizable("network has no dense or conv layers".into()));
    }
    let mut out = net.clone();
    let mut layers = Vec::with_capacity(indices.len());
    for index in indices {
        let w = reshape_to_gemm(&net.layers()[index])?;
        let stats = row_stats(&w, &levels.low)?;
        let mut map = assign(&w, ratio, &stats)?;
        map.fit_alphas(&w, &levels, config.alpha);
        let (codes, projected) = project_matrix(&w, &map, &levels)?;
        out.set_weight_matrix(index, &projected)?;
        layers.push(QuantizedLayer {
            index,
            rows: w.rows,
            cols: w.cols,
            map,
            codes,
            activation: None,
        });
    }
    Ok(QuantizedModel {
        net: out,
        config: *config,
        layers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub rows: usize,
    /// Mean |w - q(w)| over the group's weights; `None` for empty groups.
    pub mean_abs_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub index: usize,
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    pub spot: GroupSummary,
    pub fixed: GroupSummary,
    pub eight: GroupSummary,
    pub theta: Option<f64>,
}

/// Per-layer row counts and reconstruction error per row group.
pub fn summarize(original: &NetworkIR, model: &QuantizedModel) -> Result<Vec<LayerSummary>> {
    let levels = model.levels()?;
    model
        .layers
        .iter()
        .map(|ql| {
            let w = reshape_to_gemm(&original.layers()[ql.index])?;
            let q = ql.dequantized(&levels)?;
            let group = |tag: RowTag| {
                let rows: Vec<usize> = (0..ql.rows).filter(|&r| ql.map.tags[r] == tag).collect();
                let err: f64 = rows
                    .iter()
                    .flat_map(|&r| w.row(r).iter().zip(q.row(r)).map(|(a, b)| (a - b).abs()))
                    .sum();
                GroupSummary {
                    rows: rows.len(),
                    mean_abs_error: (!rows.is_empty()).then(|| err / (rows.len() * ql.cols) as f64),
                }
            };
            Ok(LayerSummary {
                index: ql.index,
                kind: original.layers()[ql.index].kind().to_string(),
                rows: ql.rows,
                cols: ql.cols,
                spot: group(RowTag::Spot),
                fixed: group(RowTag::Fixed),
                eight: group(RowTag::Eight),
                theta: ql.map.theta,
            })
        })
        .collect()
}
