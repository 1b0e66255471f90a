//! The multi-task wound classifier: configuration, network, objective,
//! training loop and checkpoint format.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod network;
pub mod train;

use thiserror::Error;

use crate::tensor::TensorError;

pub use checkpoint::{Checkpoint, CheckpointHeader, Normalization, StorageDtype, TensorEntry};
pub use config::{ModelConfig, TASK_NAMES};
pub use loss::{bce_loss_value, compute_class_weights, weighted_bce_loss, ClassWeights, TaskWeights};
pub use network::{
    attention_block, fuse_levels, size_ratio, AttentionOutput, AttentionParams, ForwardOutput, Mode, WoundModel,
};
pub use train::{train, validation_auc, EpochLog, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input batch must be [N, 3, {expected}, {expected}], got {found:?}")]
    InputShape { expected: usize, found: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("task `{task}` has no {class} training images; generate more data with the synthetic generator or disable the task")]
    EmptyClass { task: String, class: &'static str },
    #[error("labels: {0}")]
    Labels(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged { epoch: usize, batch: usize, reason: String },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
