//! Synthetic parallel-emotion corpus, pairing, splitting and manifests.

use serde::{Deserialize, Serialize};

use crate::emotion::Emotion;
use crate::units::{UnitSequence, UnitsError};

pub mod generate;
pub mod manifest;
pub mod split;
pub mod track;

pub use generate::{
    apply_emotion_transform, generate_corpus, CorpusConfig, EmotionTransformSpec, Lexicon, Motif, MotifPosition,
    SpeakerConfig,
};
pub use manifest::{load_manifest, write_manifest, write_splits, ManifestLoad};
pub use split::{assign_groups, make_parallel_pairs, partition_by_group, split_by_transcript, split_counts, Split};
pub use track::ProsodyTrack;

pub type SpeakerId = usize;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("invalid F0 value {value} at frame {index}")]
    InvalidF0 { index: usize, value: f64 },
    #[error("units ({units}) and F0 ({f0}) lengths differ")]
    LengthMismatch { units: usize, f0: usize },
    #[error("transform expects a neutral utterance, got {0}")]
    NotNeutral(Emotion),
    #[error("motif id {id} outside the reserved range {lo}..{hi}")]
    MotifOutOfRange { id: u32, lo: u32, hi: u32 },
    #[error("need at least 3 transcript groups to split, found {0}")]
    TooFewGroups(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    Ratios((f64, f64, f64)),
    #[error("{path}:{line}: {msg}")]
    Manifest { path: String, line: usize, msg: String },
    #[error(transparent)]
    Units(#[from] UnitsError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker: SpeakerId,
    pub emotion: Emotion,
    pub transcript_group: String,
    pub units: UnitSequence,
    pub prosody: ProsodyTrack,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        speaker: SpeakerId,
        emotion: Emotion,
        transcript_group: impl Into<String>,
        units: UnitSequence,
        prosody: ProsodyTrack,
    ) -> Result<Self, CorpusError> {
        if units.len() != prosody.len() {
            return Err(CorpusError::LengthMismatch { units: units.len(), f0: prosody.len() });
        }
        Ok(Utterance { id: id.into(), speaker, emotion, transcript_group: transcript_group.into(), units, prosody })
    }

    pub fn frames(&self) -> usize {
        self.units.len()
    }
}

/// Two renditions of one transcript in different emotions.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelPair {
    pub source: Utterance,
    pub target: Utterance,
}
