//! Local model representation, minibatch SGD, evaluation, FedAvg and the
//! noise-injection behaviour of malicious workers.

mod data;
mod model;
mod sgd;

pub use data::{BlobSpec, DataShard, Dataset};
pub use model::{fedavg, init_global_model, inject_gaussian_noise, Arch, ModelParams, INIT_RANGE};
pub use sgd::{evaluate, local_train, local_train_with_stats, predict, TrainStats};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("invalid architecture: {0}")]
    InvalidArch(&'static str),
    #[error("parameter vector has length {got}, architecture needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("model architectures differ")]
    ArchMismatch,
    #[error("feature dimension {got} does not match model input {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("data shard is empty")]
    EmptyShard,
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("invalid training spec: {0}")]
    InvalidTrainSpec(&'static str),
    #[error("training diverged (non-finite loss) in epoch {epoch}, step {step}")]
    Diverged { epoch: u32, step: usize },
    #[error("nothing to aggregate")]
    EmptyAggregate,
    #[error("aggregation weights must be finite and positive")]
    InvalidWeight,
    #[error("noise variance must be finite and positive")]
    InvalidVariance,
    #[error("invalid synthetic task: {0}")]
    InvalidTask(&'static str),
}

/// Hyper-parameters of one local training call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSpec {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl TrainSpec {
    pub fn new(epochs: u32, learning_rate: f64, batch_size: usize) -> Self {
        TrainSpec {
            epochs,
            learning_rate,
            batch_size,
        }
    }

    /// Same spec, different epoch count. Validators use this for their
    /// one-epoch proxy update.
    pub fn with_epochs(self, epochs: u32) -> Self {
        TrainSpec { epochs, ..self }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.epochs == 0 {
            return Err(LearnError::InvalidTrainSpec("epochs must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(LearnError::InvalidTrainSpec("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(LearnError::InvalidTrainSpec("batch size must be >= 1"));
        }
        Ok(())
    }

    pub fn validate_for(&self, shard_len: usize) -> Result<(), LearnError> {
        self.validate()?;
        if self.batch_size > shard_len {
            return Err(LearnError::InvalidTrainSpec("batch size exceeds shard size"));
        }
        Ok(())
    }
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec::new(5, 0.01, 10)
    }
}
