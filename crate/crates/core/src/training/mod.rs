//! Class-weighted cross-entropy, Adam, and the training loop.

mod adam;
mod loss;
mod trainer;

pub use adam::{adam_step, adam_update, AdamState};
pub use loss::{class_proportions, class_weights, weighted_ce_loss, ClassWeights};
pub use trainer::{train, training_class_weights, CsvLog, PassRecord, TrainObserver, TrainOutcome, Trainer, CSV_HEADER};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::EvalError;
use crate::model::ModelError;
use crate::preprocess::PreprocessError;
use crate::tensor::TensorError;
use crate::StageLabel;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("class {0} has zero or invalid proportion")]
    ZeroProportion(StageLabel),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("epoch {0} is in both the training and validation split")]
    Leakage(usize),
    #[error("epoch index {index} out of range for {len} epochs")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no gradient for trainable parameter {0}")]
    MissingGradient(String),
    #[error("training diverged: non-finite loss at step {0}")]
    NonFinite(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_training_passes: usize,
    pub seed: u64,
    /// Hand a checkpoint to the observer every this many passes; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            batch_size: 8,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_training_passes: 30,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps {} must be > 0", self.adam_eps));
        }
        if self.max_training_passes == 0 {
            return bad("max_training_passes must be >= 1".into());
        }
        Ok(())
    }
}
