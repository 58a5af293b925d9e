//! Prosody prediction: unit durations (CNN and n-gram) and quantized F0.

pub mod bins;
pub mod checkpoint;
pub mod compare;
pub mod data;
pub mod duration;
pub mod f0;
pub mod stats;

pub use bins::{decode_f0, encode_f0_targets, make_bins, BinSpec, BinStrategy, DecodeRule, F0Targets, BLUR_SIGMA};
pub use checkpoint::{decode_duration, decode_f0_model, encode_duration, encode_f0_model, load_duration, load_f0_model, save_duration, save_f0_model};
pub use compare::{duration_comparison, evaluate_durations, f0_grid, f0_grid_tsv, DurationRow, F0GridRow};
pub use data::{duration_data, f0_examples, fit_bins};
pub use duration::{
    duration_metrics, predict_durations, train_duration_cnn, train_ngram, DurationCnn, DurationCnnConfig, DurationMetrics,
    DurationModel, NgramModel,
};
pub use f0::{f0_mae_voiced, train_f0, F0Example, F0Model, F0ModelConfig};
pub use stats::{denormalize_f0, fit_speaker_stats, normalize_f0, Normalization, SpeakerStats, SIGMA_FLOOR};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ProsodyError {
    #[error("no training data")]
    Empty,
    #[error("speaker {0} has no voiced frames")]
    NoVoicedFrames(usize),
    #[error("no statistics for speaker {0}")]
    UnknownSpeaker(usize),
    #[error("unknown normalization mode {0:?}")]
    UnknownMode(String),
    #[error("need at least {needed} distinct values for adaptive bins, found {found}")]
    TooFewDistinct { needed: usize, found: usize },
    #[error("bin count must be at least 2, got {0}")]
    BinCount(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bin spec mismatch: {0}")]
    BinSpecMismatch(String),
    #[error("model is not trained")]
    Untrained,
    #[error("emotion {0} is not supported by this model")]
    UnsupportedEmotion(crate::Emotion),
    #[error("n-gram duration sampling needs a seed")]
    MissingSeed,
    #[error("{0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Units(#[from] crate::units::UnitsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
