//! Unit-to-unit translation between emotions with a small transformer,
//! denoising pretraining and three weight-sharing schemes.

pub mod checkpoint;
pub mod decode;
pub mod model;
pub mod noise;
pub mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_translator, encode_translator, load_translator, save_translator};
pub use decode::{seq_ce_loss, translate, translate_batch, DEFAULT_BEAM};
pub use model::{TranslatorConfig, TranslatorModel, TranslatorNet};
pub use noise::{corrupt, sample_span_len, NoiseConfig};
pub use train::{finetune_pairs, pretrain_denoise, teacher_forced_loss, token_accuracy, PairExample};

use crate::emotion::Emotion;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum TranslatorError {
    #[error("no training data")]
    Empty,
    #[error("model is not trained")]
    Untrained,
    #[error("emotion {0} has no decoder in this model")]
    UnsupportedEmotion(Emotion),
    #[error("length mismatch: {0} logit rows vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Units(#[from] crate::units::UnitsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How encoder and decoder weights are shared across target emotions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// One encoder and one decoder; the decoder starts from the target emotion token.
    ShareAll,
    /// One encoder, one decoder per target emotion.
    ShareEnc,
    /// One encoder and decoder per target emotion.
    ShareNone,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::ShareAll, Scheme::ShareEnc, Scheme::ShareNone];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::ShareAll => "share_all",
            Scheme::ShareEnc => "share_enc",
            Scheme::ShareNone => "share_none",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = TranslatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "share_all" => Ok(Scheme::ShareAll),
            "share_enc" => Ok(Scheme::ShareEnc),
            "share_none" => Ok(Scheme::ShareNone),
            other => Err(TranslatorError::Config(format!("unknown scheme {other:?}"))),
        }
    }
}
