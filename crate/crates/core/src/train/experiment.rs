use serde::{Deserialize, Serialize};

use super::{evaluate, train, train_float, FloatOutcome, TrainConfig, TrainOutcome};
use crate::data::Dataset;
use crate::error::Result;
use crate::network::NetworkIR;
use crate::shift::compare_engines;

/// Float pretraining followed by ADMM quantization from the float weights.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub float: FloatOutcome,
    pub quant: TrainOutcome,
    pub metrics: ExperimentMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetrics {
    pub float_test_acc: f64,
    /// Accuracy of the hard-projected model on the shift engine.
    pub quant_test_acc: f64,
    pub float_ref_test_acc: f64,
    pub feasibility_gap: f64,
    pub engines_agree: bool,
    pub max_engine_relative_diff: f64,
}

/// Relative tolerance for the per-element engine comparison.
pub const ENGINE_TOLERANCE: f64 = 1e-9;

pub fn run_experiment(
    net: &NetworkIR,
    train_set: &Dataset,
    test_set: &Dataset,
    float_cfg: &TrainConfig,
    admm_cfg: &TrainConfig,
) -> Result<Experiment> {
    let float = train_float(net, train_set, Some(test_set), float_cfg)?;
    let no_quant = vec![None; net.layers().len()];
    let (float_test_acc, _) = evaluate(&float.net, &no_quant, test_set)?;
    let quant = train(&float.net, train_set, Some(test_set), admm_cfg)?;
    let engines = compare_engines(&quant.model, test_set, ENGINE_TOLERANCE)?;
    let metrics = ExperimentMetrics {
        float_test_acc,
        quant_test_acc: engines.shift_accuracy,
        float_ref_test_acc: engines.float_ref_accuracy,
        feasibility_gap: quant.feasibility_gap,
        engines_agree: engines.agree,
        max_engine_relative_diff: engines.max_relative_diff,
    };
    Ok(Experiment { float, quant, metrics })
}
