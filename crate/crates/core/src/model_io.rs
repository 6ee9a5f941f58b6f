//! Model directories: a `manifest.json` plus one tensor container per weight
//! and bias, and for quantized models a packed code file per layer.
//!
//! ```text
//! model.msp/
//!   manifest.json
//!   layer0.weight.mspt  layer0.bias.mspt  layer0.codes.bin
//!   ...
//! ```
//!
//! Quantized layers keep their dequantized weights in the `.mspt` file so float
//! tools can read them; on load the weights are rebuilt from the codes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assign::{QuantizedLayer, QuantizedModel, RowTag, SchemeConfig, SchemeMap, SchemeRatio};
use crate::error::{Error, Result};
use crate::network::{Conv2d, Dense, Layer, NetworkIR};
use crate::quant::{pack_rows, unpack_rows, QuantScheme};
use crate::tensor::{load_tensor_container, save_tensor_container};
use crate::train::ActivationQuantizer;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "msp-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRef {
    pub file: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerEntry {
    Dense {
        weight: TensorRef,
        bias: Option<TensorRef>,
    },
    Conv2d {
        weight: TensorRef,
        bias: Option<TensorRef>,
        stride: usize,
        pad: usize,
    },
    Relu,
    Maxpool2x2,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantLayerEntry {
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
    pub ratio: String,
    /// One of `"s"`, `"f"`, `"8"` per row.
    pub tags: Vec<RowTag>,
    pub theta: Option<f64>,
    pub alpha: Vec<f64>,
    /// Normalization of the shift-path (`s`) rows.
    pub n_raw: f64,
    /// Packed codes, `bits(tag)` bits per weight, LSB first, rows byte-aligned.
    pub codes: String,
    pub activation: Option<ActivationQuantizer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantEntry {
    /// Scheme of the `s` rows.
    pub lut_scheme: QuantScheme,
    pub low_bits: u32,
    pub high_bits: u32,
    pub alpha_policy: crate::quant::AlphaPolicy,
    pub layers: Vec<QuantLayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub input_dims: Vec<usize>,
    pub layers: Vec<LayerEntry>,
    pub quantization: Option<QuantEntry>,
}

/// Either a float network or a quantized one, as found on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Float(NetworkIR),
    Quantized(QuantizedModel),
}

impl StoredModel {
    pub fn net(&self) -> &NetworkIR {
        match self {
            StoredModel::Float(n) => n,
            StoredModel::Quantized(q) => &q.net,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_network(dir: &Path, net: &NetworkIR) -> Result<Vec<LayerEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(net.layers().len());
    for (i, layer) in net.layers().iter().enumerate() {
        let save = |suffix: &str, t: &crate::tensor::Tensor| -> Result<TensorRef> {
            let file = format!("layer{i}.{suffix}.mspt");
            save_tensor_container(dir.join(&file), t)?;
            Ok(TensorRef {
                file,
                dims: t.dims().to_vec(),
            })
        };
        let bias = |b: &Option<Vec<f64>>| -> Result<Option<TensorRef>> {
            b.as_ref()
                .map(|b| save("bias", &crate::tensor::Tensor::new(vec![b.len()], b.clone())?))
                .transpose()
        };
        entries.push(match layer {
            Layer::Dense(d) => LayerEntry::Dense {
                weight: save("weight", &d.weight)?,
                bias: bias(&d.bias)?,
            },
            Layer::Conv2d(c) => LayerEntry::Conv2d {
                weight: save("weight", &c.weight)?,
                bias: bias(&c.bias)?,
                stride: c.stride,
                pad: c.pad,
            },
            Layer::Relu => LayerEntry::Relu,
            Layer::MaxPool2x2 => LayerEntry::Maxpool2x2,
            Layer::Flatten => LayerEntry::Flatten,
        });
    }
    Ok(entries)
}

pub fn save_network(dir: impl AsRef<Path>, net: &NetworkIR) -> Result<()> {
    let dir = dir.as_ref();
    let layers = write_network(dir, net)?;
    write_json(
        &dir.join(MANIFEST),
        &Manifest {
            format: FORMAT.into(),
            version: VERSION,
            input_dims: net.input_dims().to_vec(),
            layers,
            quantization: None,
        },
    )
}

pub fn save_quantized(dir: impl AsRef<Path>, model: &QuantizedModel) -> Result<()> {
    let dir = dir.as_ref();
    let layers = write_network(dir, &model.net)?;
    let levels = model.levels()?;
    let mut qlayers = Vec::with_capacity(model.layers.len());
    for ql in &model.layers {
        let file = format!("layer{}.codes.bin", ql.index);
        let bytes = pack_rows(&ql.codes, ql.cols, &ql.row_bits(&levels))?;
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        qlayers.push(QuantLayerEntry {
            index: ql.index,
            rows: ql.rows,
            cols: ql.cols,
            ratio: ql.map.ratio.to_string(),
            tags: ql.map.tags.clone(),
            theta: ql.map.theta,
            alpha: ql.map.alpha.clone(),
            n_raw: levels.lut.n_raw(),
            codes: file,
            activation: ql.activation,
        });
    }
    write_json(
        &dir.join(MANIFEST),
        &Manifest {
            format: FORMAT.into(),
            version: VERSION,
            input_dims: model.net.input_dims().to_vec(),
            layers,
            quantization: Some(QuantEntry {
                lut_scheme: model.config.lut,
                low_bits: model.config.low_bits,
                high_bits: model.config.high_bits,
                alpha_policy: model.config.alpha,
                layers: qlayers,
            }),
        },
    )
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::BadMagic {
            expected: format!("{FORMAT} v{VERSION}"),
            found: format!("{} v{}", m.format, m.version),
        });
    }
    Ok(m)
}

fn load_tensor_checked(dir: &Path, r: &TensorRef) -> Result<crate::tensor::Tensor> {
    let t = load_tensor_container(dir.join(&r.file))?;
    if t.dims() != r.dims.as_slice() {
        return Err(Error::Shape(format!(
            "{} has dims {:?}, manifest says {:?}",
            r.file,
            t.dims(),
            r.dims
        )));
    }
    Ok(t)
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<StoredModel> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let bias = |b: &Option<TensorRef>| -> Result<Option<Vec<f64>>> {
        b.as_ref()
            .map(|r| load_tensor_checked(dir, r).map(|t| t.into_data()))
            .transpose()
    };
    let mut layers = Vec::with_capacity(m.layers.len());
    for entry in &m.layers {
        layers.push(match entry {
            LayerEntry::Dense { weight, bias: b } => {
                Layer::Dense(Dense::new(load_tensor_checked(dir, weight)?, bias(b)?)?)
            }
            LayerEntry::Conv2d {
                weight,
                bias: b,
                stride,
                pad,
            } => Layer::Conv2d(Conv2d::new(load_tensor_checked(dir, weight)?, bias(b)?, *stride, *pad)?),
            LayerEntry::Relu => Layer::Relu,
            LayerEntry::Maxpool2x2 => Layer::MaxPool2x2,
            LayerEntry::Flatten => Layer::Flatten,
        });
    }
    let net = NetworkIR::new(m.input_dims.clone(), layers)?;
    let Some(q) = m.quantization else {
        return Ok(StoredModel::Float(net));
    };
    let config = SchemeConfig {
        lut: q.lut_scheme,
        low_bits: q.low_bits,
        high_bits: q.high_bits,
        alpha: q.alpha_policy,
    };
    let levels = config.levels()?;
    let mut qlayers = Vec::with_capacity(q.layers.len());
    for e in q.layers {
        if e.tags.len() != e.rows || e.alpha.len() != e.rows {
            return Err(Error::Shape(format!("layer {} tag/alpha arrays do not cover {} rows", e.index, e.rows)));
        }
        if e.n_raw != levels.lut.n_raw() {
            return Err(Error::InvalidScheme(format!(
                "layer {} stores n_raw {} but {} implies {}",
                e.index,
                e.n_raw,
                config.lut,
                levels.lut.n_raw()
            )));
        }
        if let Some(i) = e.alpha.iter().position(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidAlpha(e.alpha[i]));
        }
        let path = dir.join(&e.codes);
        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
        let row_bits: Vec<u32> = e.tags.iter().map(|&t| levels.for_tag(t).bits()).collect();
        let codes = unpack_rows(&bytes, e.cols, &row_bits)?;
        let ratio: SchemeRatio = e.ratio.parse()?;
        qlayers.push(QuantizedLayer {
            index: e.index,
            rows: e.rows,
            cols: e.cols,
            map: SchemeMap {
                tags: e.tags,
                alpha: e.alpha,
                ratio,
                theta: e.theta,
            },
            codes,
            activation: e.activation,
        });
    }
    Ok(StoredModel::Quantized(QuantizedModel::from_parts(net, config, qlayers)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::quantize_model;
    use crate::network::{mlp, NetworkBuilder};

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = NetworkBuilder::new(&[1, 6, 6], 4)
            .conv(2, 3, 1, 1)
            .relu()
            .maxpool()
            .flatten()
            .dense(3)
            .build()
            .unwrap();
        save_network(dir.path(), &net).unwrap();
        assert_eq!(load_model(dir.path()).unwrap(), StoredModel::Float(net));
    }

    #[test]
    fn quantized_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = mlp(&[2, 20, 3], 9).unwrap();
        let mut q = quantize_model(&net, &SchemeRatio::MSP, &SchemeConfig::default()).unwrap();
        q.layers[0].activation = Some(ActivationQuantizer::new(4, 0.9).unwrap());
        save_quantized(dir.path(), &q).unwrap();
        assert_eq!(load_model(dir.path()).unwrap(), StoredModel::Quantized(q));
    }

    #[test]
    fn unknown_manifest_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_network(dir.path(), &mlp(&[2, 2], 1).unwrap()).unwrap();
        let p = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&p).unwrap().replacen('{', "{\"extra\": 1,", 1);
        fs::write(&p, text).unwrap();
        assert!(load_model(dir.path()).is_err());
    }
}
