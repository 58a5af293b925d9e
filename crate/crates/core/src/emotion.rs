use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Acted emotion category of an utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Amused,
    Angry,
    Sleepy,
    Disgusted,
}

impl Emotion {
    pub const ALL: [Emotion; 5] = [
        Emotion::Neutral,
        Emotion::Amused,
        Emotion::Angry,
        Emotion::Sleepy,
        Emotion::Disgusted,
    ];

    /// Stable index used for emotion tokens and embedding rows.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Amused => "amused",
            Emotion::Angry => "angry",
            Emotion::Sleepy => "sleepy",
            Emotion::Disgusted => "disgusted",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown emotion label {0:?}")]
pub struct UnknownEmotion(pub String);

impl FromStr for Emotion {
    type Err = UnknownEmotion;

    /// Parses a label, ignoring surrounding whitespace and case.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "neutral" => Ok(Emotion::Neutral),
            "amused" => Ok(Emotion::Amused),
            "angry" => Ok(Emotion::Angry),
            "sleepy" => Ok(Emotion::Sleepy),
            "disgusted" => Ok(Emotion::Disgusted),
            _ => Err(UnknownEmotion(s.to_string())),
        }
    }
}
