//! The segmentation network: encoder `Ψ` (bottleneck + dilated TCN stack),
//! linear head `θ`, composite loss, hand-written gradients and training.

mod adam;
mod backward;
mod checkpoint;
mod gradcheck;
mod loss;
mod model;
mod train;

use thiserror::Error;

pub use adam::{adam_step, Adam, AdamConfig};
pub use backward::{backward, batch_gradients};
pub use checkpoint::{decode_model, encode_model, read_model, write_model};
pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
pub use loss::{bce_masked, total_loss, LabelMatrix, LossBreakdown, LossWeights};
pub use model::{
    init_model, Architecture, Conv1d, ForwardOutput, ForwardTrace, InputNorm, ParamSet, SegModel,
};
pub use train::{evaluate_examples, train, EpochMetrics, Example, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid labels: {0}")]
    Labels(String),
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),
    #[error("empty training set")]
    EmptyDataset,
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Nmf(#[from] crate::nmf::NmfError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
