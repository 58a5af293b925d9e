//! The single TOML file that drives corpus generation, training,
//! conversion and evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CorpusConfig;
use crate::nn::TrainConfig;
use crate::prosody::{BinStrategy, DecodeRule, DurationCnnConfig, F0ModelConfig, Normalization, BLUR_SIGMA};
use crate::translator::{NoiseConfig, TranslatorConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratios: (f64, f64, f64),
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { ratios: (0.9, 0.05, 0.05) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslatorSection {
    #[serde(flatten)]
    pub model: TranslatorConfig,
    pub pretrain: bool,
    pub noise: NoiseConfig,
}

impl Default for TranslatorSection {
    fn default() -> Self {
        TranslatorSection { model: TranslatorConfig::default(), pretrain: false, noise: NoiseConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationVariant {
    Cnn,
    Ngram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DurationSection {
    pub variant: DurationVariant,
    pub ngram_order: usize,
    pub cnn: DurationCnnConfig,
}

impl Default for DurationSection {
    fn default() -> Self {
        DurationSection { variant: DurationVariant::Cnn, ngram_order: 3, cnn: DurationCnnConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct F0Section {
    pub bins: usize,
    pub strategy: BinStrategy,
    pub normalization: Normalization,
    pub decode_rule: DecodeRule,
    pub blur_sigma: f64,
    pub model: F0ModelConfig,
}

impl Default for F0Section {
    fn default() -> Self {
        F0Section {
            bins: crate::prosody::bins::DEFAULT_BINS,
            strategy: BinStrategy::Adaptive,
            normalization: Normalization::MeanStd,
            decode_rule: DecodeRule::WeightedAverage,
            blur_sigma: BLUR_SIGMA,
            model: F0ModelConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub pretrain: TrainConfig,
    pub translator: TrainConfig,
    pub duration: TrainConfig,
    pub f0: TrainConfig,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            pretrain: TrainConfig { lr: 1e-3, batch_size: 32, max_epochs: 20, patience: 3, warmup_steps: 100, ..Default::default() },
            translator: TrainConfig { lr: 1e-3, batch_size: 32, max_epochs: 40, patience: 5, warmup_steps: 100, ..Default::default() },
            duration: TrainConfig { lr: 1e-3, batch_size: 16, max_epochs: 60, patience: 8, ..Default::default() },
            f0: TrainConfig { lr: 1e-3, batch_size: 16, max_epochs: 40, patience: 6, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSection {
    pub bleu_max_n: Option<usize>,
}

/// Whole-pipeline configuration. `seed` has no default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub translator: TranslatorSection,
    #[serde(default)]
    pub duration: DurationSection,
    #[serde(default)]
    pub f0: F0Section,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

impl PipelineConfig {
    pub fn with_seed(seed: u64) -> Self {
        PipelineConfig {
            seed,
            corpus: CorpusConfig::default(),
            split: SplitConfig::default(),
            translator: TranslatorSection::default(),
            duration: DurationSection::default(),
            f0: F0Section::default(),
            training: TrainingSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    /// Hex SHA-256 of the canonical JSON form, so formatting and key order
    /// in the source file do not matter.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&serde_json::to_value(self).expect("serializable")).expect("serializable");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.corpus.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.translator.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.translator.noise.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.translator.model.vocab_size != self.corpus.vocab_size {
            return bad(format!(
                "translator vocab_size {} != corpus vocab_size {}",
                self.translator.model.vocab_size, self.corpus.vocab_size
            ));
        }
        if self.duration.cnn.vocab as u32 != self.corpus.vocab_size || self.f0.model.vocab as u32 != self.corpus.vocab_size {
            return bad("duration and f0 vocab must equal the corpus vocab_size".into());
        }
        let corpus_emotions = self.corpus.all_emotions();
        if let Some(e) = self.translator.model.emotions.iter().find(|e| !corpus_emotions.contains(e)) {
            return bad(format!("translator emotion {e} does not occur in the corpus"));
        }
        if let Some(e) = corpus_emotions.iter().find(|e| !self.translator.model.emotions.contains(e)) {
            return bad(format!("corpus emotion {e} has no translator decoder"));
        }
        if self.f0.bins < 2 {
            return bad(format!("f0 bins must be at least 2, got {}", self.f0.bins));
        }
        if !(self.f0.blur_sigma >= 0.0) {
            return bad("f0 blur_sigma must be non-negative".into());
        }
        if self.duration.variant == DurationVariant::Ngram && self.duration.ngram_order == 0 {
            return bad("ngram_order must be at least 1".into());
        }
        let (a, b, c) = self.split.ratios;
        if [a, b, c].iter().any(|r| !(*r > 0.0)) {
            return bad("split ratios must be positive".into());
        }
        Ok(())
    }
}
