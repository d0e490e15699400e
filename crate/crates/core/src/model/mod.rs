//! Compact decoder-only transformer: parameters, masked-loss training with
//! hand-written backpropagation, KV-cached greedy decoding, checkpoints and
//! finite-difference gradient checks.

mod checkpoint;
mod config;
mod gradcheck;
mod infer;
mod ops;
mod params;
mod scalar;
mod train;
mod transformer;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CheckpointHeader};
pub use config::{LrDecay, ModelConfig, PositionalScheme, TrainConfig};
pub use gradcheck::{grad_check, GradCheckReport, GradCheckSettings};
pub use infer::{decode_batch, forward_logits, greedy_decode};
pub use params::{Layout, ParamGroup, TensorSpec, TransformerParams};
pub use scalar::{gemm, Scalar};
pub use train::{train, train_encoded, Adam, LossCurve, TrainOutcome};
pub use transformer::{loss, loss_and_grad, Batch};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("model vocabulary size {model} does not match numeral vocabulary size {vocab}")]
    VocabMismatch { model: usize, vocab: usize },
    #[error("sequence of length {len} exceeds context length {context}")]
    Length { len: usize, context: usize },
    #[error("token id {token} is outside the vocabulary of size {vocab}")]
    Token { token: u32, vocab: usize },
    #[error("batch has no loss positions")]
    DegenerateBatch,
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("corrupt checkpoint {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
