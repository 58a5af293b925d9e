//! Minimal reverse-mode differentiation engine with the layers, optimizer
//! and verification tools used by the translator and prosody models.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{AttentionLayout, Gradients, Graph, Segments, Var};
pub use layers::{Conv1d, Embedding, FeedForward, Layer, LayerInput, LayerNorm, LayerSpec, Linear, MultiHeadAttention, Sequential};
pub use params::{ParamId, ParamStore};
pub use tensor::{Real, Tensor};
pub use train::{derive_seed, fit, EarlyStopping, TrainConfig, TrainHistory};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("no training data")]
    EmptyData,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
