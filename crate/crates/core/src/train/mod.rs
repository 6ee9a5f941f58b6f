//! Quantization-aware training: SGD with momentum and ℓ2 on an ADMM-augmented
//! loss for weights, straight-through activation quantizers, and a final hard
//! projection onto each row's level set.

mod admm;
mod experiment;
mod grad;
mod ste;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use experiment::{run_experiment, Experiment, ExperimentMetrics, ENGINE_TOLERANCE};
pub use admm::{admm_update, augmented_loss, penalty, penalty_grad, AdmmLayer, AdmmState};
pub use grad::{
    backward, evaluate, forward, forward_trace, softmax_cross_entropy, Gradients, LayerQuantizers, Trace,
};
pub use ste::{
    calibrate_a_max, percentile, ste_activation, ActivationQuantizer, CALIBRATION_PERCENTILE,
    MAX_ACTIVATION_BITS,
};

use crate::assign::{project_matrix, QuantizedLayer, QuantizedModel, SchemeConfig, SchemeRatio};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{reshape_to_gemm, NetworkIR};
use crate::ops::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `gamma` every `every` epochs.
    Step { every: usize, gamma: f64 },
    /// Half-cosine from the base rate down to zero over the run.
    Cosine,
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { every, gamma } => base * gamma.powi((epoch / every.max(1)) as i32),
            LrSchedule::Cosine => {
                let t = epoch as f64 / epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub l2: f64,
    /// Initial ADMM penalty.
    pub rho: f64,
    /// Per-update multiplier on `rho`, capped at `rho_max`.
    pub rho_growth: f64,
    pub rho_max: f64,
    /// Epochs between ADMM updates.
    pub update_period: usize,
    pub seed: u64,
    /// `None` trains with float activations.
    pub activation_bits: Option<u32>,
    pub ratio: SchemeRatio,
    pub scheme: SchemeConfig,
    /// Recompute the row assignment at every ADMM update.
    pub reassign: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 32,
            lr: 0.05,
            schedule: LrSchedule::Cosine,
            momentum: 0.9,
            l2: 1e-4,
            rho: 1e-3,
            rho_growth: 1.1,
            rho_max: 50.0,
            update_period: 1,
            seed: 7,
            activation_bits: Some(4),
            ratio: SchemeRatio::MSP,
            scheme: SchemeConfig {
                alpha: crate::quant::AlphaPolicy::LEAST_SQUARES,
                ..SchemeConfig::default()
            },
            reassign: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr", self.lr), ("rho_growth", self.rho_growth)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("momentum", self.momentum),
            ("l2", self.l2),
            ("rho", self.rho),
            ("rho_max", self.rho_max),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.momentum >= 1.0 {
            return Err(Error::Config("momentum must be below 1".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.update_period == 0 {
            return Err(Error::Config("epochs, batch_size and update_period must be positive".into()));
        }
        if let LrSchedule::Step { every, gamma } = self.schedule {
            if every == 0 || !(gamma > 0.0) {
                return Err(Error::Config("step schedule needs every > 0 and gamma > 0".into()));
            }
        }
        self.ratio.validate()?;
        self.scheme.levels()?;
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task_loss: f64,
    pub penalty: Option<f64>,
    pub feasibility_gap: Option<f64>,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Calibrates one quantizer per quantizable layer on `samples`, layer by layer,
/// so each clip value sees the already-quantized upstream activations.
pub fn calibrate_activations(net: &NetworkIR, data: &Dataset, count: usize, bits: u32) -> Result<Vec<Option<ActivationQuantizer>>> {
    let n = count.min(data.len());
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut quantizers = vec![None; net.layers().len()];
    for index in net.quantizable_indices() {
        let mut values = Vec::new();
        for i in 0..n {
            let trace = forward_trace(net, &quantizers, data.sample(i))?;
            values.extend_from_slice(trace.layer_input(index));
        }
        quantizers[index] = Some(ActivationQuantizer::new(bits, calibrate_a_max(&values))?);
    }
    Ok(quantizers)
}

#[derive(Debug, Clone)]
pub struct FloatOutcome {
    pub net: NetworkIR,
    pub log: TrainLog,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Hard-projected model with codes, maps and activation quantizers.
    pub model: QuantizedModel,
    /// Weights at the end of training, before the hard projection.
    pub trained: NetworkIR,
    /// `max |W - proj(W)|` just before the hard projection.
    pub feasibility_gap: f64,
    pub log: TrainLog,
}

struct Velocity {
    weights: Vec<Option<Vec<f64>>>,
    biases: Vec<Option<Vec<f64>>>,
}

struct Admm<'a> {
    state: AdmmState,
    levels: crate::assign::SchemeLevels,
    cfg: &'a TrainConfig,
}

/// Plain float training with the same loop, shuffling and optimizer as [`train`].
pub fn train_float(net: &NetworkIR, train_set: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<FloatOutcome> {
    cfg.validate()?;
    let mut net = net.clone();
    let quantizers = vec![None; net.layers().len()];
    let log = run(&mut net, train_set, test, cfg, &quantizers, None)?;
    Ok(FloatOutcome { net, log })
}

/// ADMM quantization-aware training from `net` (normally a trained float network).
pub fn train(net: &NetworkIR, train_set: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut net = net.clone();
    let levels = cfg.scheme.levels()?;
    let quantizers = match cfg.activation_bits {
        Some(bits) => calibrate_activations(&net, train_set, cfg.batch_size, bits)?,
        None => vec![None; net.layers().len()],
    };
    let state = AdmmState::init(&net, &cfg.ratio, &levels, cfg.scheme.alpha, cfg.rho, cfg.update_period)?;
    let mut admm = Admm { state, levels, cfg };
    let log = run(&mut net, train_set, test, cfg, &quantizers, Some(&mut admm))?;

    let Admm { state, levels, .. } = admm;
    let feasibility_gap = state.feasibility_gap(&net, &levels)?;
    let trained = net.clone();
    let mut layers = Vec::with_capacity(state.layers.len());
    for l in state.layers {
        let w = reshape_to_gemm(&trained.layers()[l.index])?;
        let (codes, projected) = project_matrix(&w, &l.map, &levels)?;
        net.set_weight_matrix(l.index, &projected)?;
        layers.push(QuantizedLayer {
            index: l.index,
            rows: w.rows,
            cols: w.cols,
            map: l.map,
            codes,
            activation: quantizers[l.index],
        });
    }
    Ok(TrainOutcome {
        model: QuantizedModel {
            net,
            config: cfg.scheme,
            layers,
        },
        trained,
        feasibility_gap,
        log,
    })
}

fn run(
    net: &mut NetworkIR,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    quantizers: &[Option<ActivationQuantizer>],
    mut admm: Option<&mut Admm<'_>>,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let zero = Gradients::zeros(net);
    let mut velocity = Velocity {
        weights: zero.weights.clone(),
        biases: zero.biases.clone(),
    };
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr * cfg.schedule.rate(1.0, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = zero.clone();
            let mut batch_loss = 0.0;
            for &i in batch {
                let trace = forward_trace(net, quantizers, data.sample(i))?;
                let (loss, g) = softmax_cross_entropy(&trace.output, data.label(i));
                if argmax(&trace.output) == data.label(i) {
                    correct += 1;
                }
                batch_loss += loss;
                backward(net, &trace, &g, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            if let Some(a) = admm.as_deref() {
                for l in &a.state.layers {
                    let w = net.layers()[l.index].weight().expect("quantizable").data();
                    let pg = penalty_grad(w, &l.z.data, &l.u.data, a.state.rho);
                    let g = grads.weights[l.index].as_mut().expect("quantizable");
                    g.iter_mut().zip(&pg).for_each(|(g, p)| *g += p);
                }
            }
            step(net, &grads, &mut velocity, lr, cfg)?;
        }
        let task_loss = loss_sum / data.len() as f64;
        let (mut penalty_value, mut gap) = (None, None);
        if let Some(a) = admm.as_deref_mut() {
            if (epoch + 1) % a.state.update_period == 0 {
                a.state.update(net, &a.levels, a.cfg.scheme.alpha, a.cfg.reassign)?;
                let next = (a.state.rho * a.cfg.rho_growth).min(a.cfg.rho_max.max(a.cfg.rho));
                a.state.set_rho(next);
            }
            penalty_value = Some(a.state.penalty(net));
            gap = Some(a.state.feasibility_gap(net, &a.levels)?);
        }
        let test_acc = match test {
            Some(t) => Some(evaluate(net, quantizers, t)?.0),
            None => None,
        };
        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            task_loss,
            penalty: penalty_value,
            feasibility_gap: gap,
            train_acc: correct as f64 / data.len() as f64,
            test_acc,
        });
    }
    Ok(log)
}

fn step(net: &mut NetworkIR, grads: &Gradients, v: &mut Velocity, lr: f64, cfg: &TrainConfig) -> Result<()> {
    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        if let (Some(g), Some(vel)) = (&grads.weights[i], v.weights[i].as_mut()) {
            let w = layer.weight_mut().expect("weights");
            for ((wv, &gv), vv) in w.data_mut().iter_mut().zip(g).zip(vel.iter_mut()) {
                *vv = cfg.momentum * *vv + gv + cfg.l2 * *wv;
                *wv -= lr * *vv;
            }
            if let Some(index) = w.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        if let (Some(g), Some(vel)) = (&grads.biases[i], v.biases[i].as_mut()) {
            let b = layer.bias_mut().expect("bias");
            for ((bv, &gv), vv) in b.iter_mut().zip(g).zip(vel.iter_mut()) {
                *vv = cfg.momentum * *vv + gv;
                *bv -= lr * *vv;
            }
        }
    }
    Ok(())
}
