use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{magnitude_gemm, reference_gemm, relative_diff, Engine, PreparedLayer};
use crate::assign::QuantizedModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{reshape_to_gemm, Layer, WeightMatrix};
use crate::ops::{argmax, im2col, maxpool2x2};
use crate::tensor::{save_tensor_container, Tensor};
use crate::train::ActivationQuantizer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerChecksum {
    pub index: usize,
    pub kind: String,
    /// FNV-1a 64 over the little-endian bytes of every output value, in sample order.
    pub fnv1a: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub engine: Engine,
    pub samples: usize,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub checksums: Vec<LayerChecksum>,
}

struct Fnv(u64);

impl Fnv {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    fn update(&mut self, values: &[f64]) {
        for v in values {
            for b in v.to_le_bytes() {
                self.0 ^= u64::from(b);
                self.0 = self.0.wrapping_mul(Self::PRIME);
            }
        }
    }
}

/// Per-layer state shared by both engines.
enum Step {
    Gemm {
        quantizer: ActivationQuantizer,
        prepared: PreparedLayer,
        dequantized: WeightMatrix,
    },
    Other,
}

struct Pipeline<'a> {
    model: &'a QuantizedModel,
    steps: Vec<Step>,
    dims: Vec<Vec<usize>>,
}

impl<'a> Pipeline<'a> {
    fn new(model: &'a QuantizedModel) -> Result<Self> {
        let levels = model.levels()?;
        let mut steps = Vec::with_capacity(model.net.layers().len());
        for (i, layer) in model.net.layers().iter().enumerate() {
            if !layer.is_quantizable() {
                steps.push(Step::Other);
                continue;
            }
            let ql = model
                .layer_for(i)
                .ok_or_else(|| Error::Unfinalized(format!("layer {i} has no quantized weights")))?;
            let quantizer = ql
                .activation
                .ok_or_else(|| Error::Unfinalized(format!("layer {i} has no calibrated activation quantizer")))?;
            let prepared = PreparedLayer::new(ql, &levels)?;
            prepared.check_accumulator(quantizer.bits)?;
            steps.push(Step::Gemm {
                quantizer,
                prepared,
                dequantized: reshape_to_gemm(layer)?,
            });
        }
        Ok(Self {
            model,
            steps,
            dims: model.net.layer_input_dims(),
        })
    }

    /// Runs one sample; `visit(layer, engine_output, other_engine_output, magnitudes)` sees
    /// each layer's output. In lockstep mode the GEMMs of both engines run on the
    /// same codes and the `engine` output is propagated.
    fn run(
        &self,
        x: &[f64],
        engine: Engine,
        lockstep: bool,
        visit: &mut dyn FnMut(usize, &[f64], Option<(&[f64], &[f64])>),
    ) -> Result<Vec<f64>> {
        let mut cur = x.to_vec();
        for (i, (layer, step)) in self.model.net.layers().iter().zip(&self.steps).enumerate() {
            let d = &self.dims[i];
            let mut side = None;
            cur = match (layer, step) {
                (_, Step::Gemm { quantizer, prepared, dequantized }) => {
                    let codes: Vec<u32> = cur.iter().map(|&a| quantizer.code(a)).collect();
                    let (cols, n) = match layer {
                        Layer::Conv2d(c) => {
                            let g = c.geometry(d)?;
                            (im2col(&codes, &g), g.col_cols())
                        }
                        _ => (codes, 1),
                    };
                    let s_a = quantizer.scale();
                    let run = |e: Engine| match e {
                        Engine::Shift => prepared.gemm(&cols, n, s_a),
                        Engine::FloatRef => reference_gemm(&cols, n, s_a, dequantized),
                    };
                    let mut y = run(engine)?;
                    if lockstep {
                        let other = match engine {
                            Engine::Shift => Engine::FloatRef,
                            Engine::FloatRef => Engine::Shift,
                        };
                        side = Some((run(other)?, magnitude_gemm(&cols, n, s_a, dequantized)));
                    }
                    if let Some(b) = layer.bias() {
                        for (row, &bv) in y.chunks_exact_mut(n).zip(b) {
                            row.iter_mut().for_each(|v| *v += bv);
                        }
                        if let Some((o, _)) = side.as_mut() {
                            for (row, &bv) in o.chunks_exact_mut(n).zip(b) {
                                row.iter_mut().for_each(|v| *v += bv);
                            }
                        }
                    }
                    y
                }
                (Layer::Relu, _) => cur.iter().map(|&v| v.max(0.0)).collect(),
                (Layer::MaxPool2x2, _) => maxpool2x2(&cur, d[0], d[1], d[2]).0,
                _ => cur,
            };
            visit(i, &cur, side.as_ref().map(|(o, m)| (o.as_slice(), m.as_slice())));
        }
        Ok(cur)
    }
}

/// Runs every sample through `engine`; the model must carry codes and
/// activation quantizers for every dense/conv layer.
pub fn infer(model: &QuantizedModel, data: &Dataset, engine: Engine) -> Result<InferenceResult> {
    infer_with_dump(model, data, engine, None)
}

/// [`infer`], optionally writing each layer's outputs as `[n, ...]` tensor containers
/// named `layer{i}_{kind}.mspt` under `dump`.
pub fn infer_with_dump(
    model: &QuantizedModel,
    data: &Dataset,
    engine: Engine,
    dump: Option<&Path>,
) -> Result<InferenceResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pipeline = Pipeline::new(model)?;
    let layers = model.net.layers();
    let mut hashes: Vec<Fnv> = layers.iter().map(|_| Fnv(Fnv::OFFSET)).collect();
    let mut dumps: Vec<Vec<f64>> = if dump.is_some() {
        vec![Vec::new(); layers.len()]
    } else {
        Vec::new()
    };
    let mut predictions = Vec::with_capacity(data.len());
    let mut correct = 0usize;
    for s in 0..data.len() {
        let out = pipeline.run(data.sample(s), engine, false, &mut |i, y, _| {
            hashes[i].update(y);
            if let Some(d) = dumps.get_mut(i) {
                d.extend_from_slice(y);
            }
        })?;
        let p = argmax(&out);
        if p == data.label(s) {
            correct += 1;
        }
        predictions.push(p);
    }
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, values) in dumps.into_iter().enumerate() {
            let mut dims = vec![data.len()];
            dims.extend_from_slice(&pipeline.dims[i + 1]);
            let path = dir.join(format!("layer{i}_{}.mspt", layers[i].kind()));
            save_tensor_container(&path, &Tensor::new(dims, values)?)?;
        }
    }
    Ok(InferenceResult {
        engine,
        samples: data.len(),
        accuracy: correct as f64 / data.len() as f64,
        predictions,
        checksums: hashes
            .into_iter()
            .enumerate()
            .map(|(index, h)| LayerChecksum {
                index,
                kind: layers[index].kind().to_string(),
                fnv1a: format!("{:016x}", h.0),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineComparison {
    pub samples: usize,
    pub shift_accuracy: f64,
    pub float_ref_accuracy: f64,
    /// Samples whose predicted class differs between independent runs of the two engines.
    pub prediction_mismatches: usize,
    /// Largest per-element GEMM output difference, relative to
    /// `max(|y|, sum |w * a|)`, with both engines fed the same activation codes.
    pub max_relative_diff: f64,
    pub agree: bool,
}

/// Runs both engines independently and in lockstep.
pub fn compare_engines(model: &QuantizedModel, data: &Dataset, tolerance: f64) -> Result<EngineComparison> {
    let shift = infer(model, data, Engine::Shift)?;
    let float = infer(model, data, Engine::FloatRef)?;
    let pipeline = Pipeline::new(model)?;
    let mut worst = 0.0f64;
    for s in 0..data.len() {
        pipeline.run(data.sample(s), Engine::Shift, true, &mut |_, y, side| {
            if let Some((other, mag)) = side {
                for ((&a, &b), &m) in y.iter().zip(other).zip(mag) {
                    worst = worst.max(relative_diff(a, b, m));
                }
            }
        })?;
    }
    let mismatches = shift
        .predictions
        .iter()
        .zip(&float.predictions)
        .filter(|(a, b)| a != b)
        .count();
    Ok(EngineComparison {
        samples: data.len(),
        shift_accuracy: shift.accuracy,
        float_ref_accuracy: float.accuracy,
        prediction_mismatches: mismatches,
        max_relative_diff: worst,
        agree: mismatches == 0 && worst <= tolerance,
    })
}
