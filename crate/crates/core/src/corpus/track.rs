use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Per-frame F0 in Hz at the unit frame rate; `0.0` marks an unvoiced frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProsodyTrack {
    f0_hz: Vec<f64>,
}

impl ProsodyTrack {
    pub fn new(f0_hz: Vec<f64>) -> Result<Self, CorpusError> {
        if let Some(i) = f0_hz.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(CorpusError::InvalidF0 { index: i, value: f0_hz[i] });
        }
        Ok(ProsodyTrack { f0_hz })
    }

    pub fn unvoiced(frames: usize) -> Self {
        ProsodyTrack { f0_hz: vec![0.0; frames] }
    }

    pub fn values(&self) -> &[f64] {
        &self.f0_hz
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.f0_hz
    }

    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn is_voiced(&self, i: usize) -> bool {
        self.f0_hz[i] > 0.0
    }

    pub fn voiced_count(&self) -> usize {
        self.f0_hz.iter().filter(|v| **v > 0.0).count()
    }

    /// Mean over voiced frames.
    pub fn voiced_mean(&self) -> Option<f64> {
        crate::metrics::mean(self.f0_hz.iter().copied().filter(|v| *v > 0.0))
    }

    pub fn truncate(&mut self, len: usize) {
        self.f0_hz.truncate(len);
    }
}
