use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ProsodyError;
use crate::corpus::{SpeakerId, Utterance};
use crate::metrics::CompensatedSum;

pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStats {
    pub mean: f64,
    pub std: f64,
}

impl SpeakerStats {
    /// Mean and sample standard deviation (N-1), floored at [`SIGMA_FLOOR`].
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mut s = CompensatedSum::default();
        values.iter().for_each(|&v| s.add(v));
        let mean = s.total() / n as f64;
        let std = if n > 1 {
            let mut q = CompensatedSum::default();
            values.iter().for_each(|&v| q.add((v - mean) * (v - mean)));
            (q.total() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(SpeakerStats { mean, std: std.max(SIGMA_FLOOR) })
    }
}

/// Per-speaker statistics over voiced frames only.
pub fn fit_speaker_stats<'a>(
    corpus: impl IntoIterator<Item = &'a Utterance>,
) -> Result<BTreeMap<SpeakerId, SpeakerStats>, ProsodyError> {
    let mut voiced: BTreeMap<SpeakerId, Vec<f64>> = BTreeMap::new();
    for u in corpus {
        let entry = voiced.entry(u.speaker).or_default();
        entry.extend(u.prosody.values().iter().copied().filter(|&f| f > 0.0));
    }
    voiced
        .into_iter()
        .map(|(s, v)| SpeakerStats::from_values(&v).map(|st| (s, st)).ok_or(ProsodyError::NoVoicedFrames(s)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    Mean,
    MeanStd,
}

impl Normalization {
    pub const ALL: [Normalization; 3] = [Normalization::None, Normalization::Mean, Normalization::MeanStd];

    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::Mean => "mean",
            Normalization::MeanStd => "mean_std",
        }
    }

    pub fn apply(self, f: f64, s: &SpeakerStats) -> f64 {
        match self {
            Normalization::None => f,
            Normalization::Mean => f - s.mean,
            Normalization::MeanStd => (f - s.mean) / s.std,
        }
    }

    pub fn invert(self, v: f64, s: &SpeakerStats) -> f64 {
        match self {
            Normalization::None => v,
            Normalization::Mean => v + s.mean,
            Normalization::MeanStd => v * s.std + s.mean,
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Normalization {
    type Err = ProsodyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(Normalization::None),
            "mean" => Ok(Normalization::Mean),
            "mean_std" => Ok(Normalization::MeanStd),
            _ => Err(ProsodyError::UnknownMode(s.to_string())),
        }
    }
}

/// Voiced frames mapped into normalized space; unvoiced frames become `None`.
pub fn normalize_f0(track: &[f64], stats: &SpeakerStats, mode: Normalization) -> Vec<Option<f64>> {
    track.iter().map(|&f| (f > 0.0).then(|| mode.apply(f, stats))).collect()
}

pub fn denormalize_f0(track: &[Option<f64>], stats: &SpeakerStats, mode: Normalization) -> Vec<f64> {
    track.iter().map(|v| v.map_or(0.0, |v| mode.invert(v, stats))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ProsodyTrack;
    use crate::units::UnitSequence;
    use crate::Emotion;
    use proptest::prelude::*;

    fn utt(speaker: usize, f0: Vec<f64>) -> Utterance {
        let n = f0.len();
        Utterance::new("u", speaker, Emotion::Neutral, "g", UnitSequence::new(vec![1; n]), ProsodyTrack::new(f0).unwrap())
            .unwrap()
    }

    #[test]
    fn stats_examples() {
        let s = fit_speaker_stats(&[utt(0, vec![100.0, 120.0, 140.0])]).unwrap()[&0];
        assert!((s.mean - 120.0).abs() < 1e-12 && (s.std - 20.0).abs() < 1e-12);
        let s = fit_speaker_stats(&[utt(0, vec![0.0, 100.0, 0.0, 140.0])]).unwrap()[&0];
        assert_eq!(s.mean, 120.0);
        let s = fit_speaker_stats(&[utt(3, vec![150.0])]).unwrap()[&3];
        assert_eq!(s.std, SIGMA_FLOOR);
        assert!(matches!(fit_speaker_stats(&[utt(1, vec![0.0])]), Err(ProsodyError::NoVoicedFrames(1))));
    }

    #[test]
    fn normalization_examples() {
        let st = SpeakerStats { mean: 120.0, std: 20.0 };
        let t = [100.0, 120.0, 140.0];
        assert_eq!(normalize_f0(&t, &st, Normalization::None), vec![Some(100.0), Some(120.0), Some(140.0)]);
        assert_eq!(normalize_f0(&t, &st, Normalization::MeanStd), vec![Some(-1.0), Some(0.0), Some(1.0)]);
        assert_eq!(normalize_f0(&[0.0, 130.0], &st, Normalization::Mean), vec![None, Some(10.0)]);
        assert!("median".parse::<Normalization>().is_err());
        assert_eq!("mean-std".parse::<Normalization>().unwrap(), Normalization::MeanStd);
    }

    proptest! {
        #[test]
        fn round_trip(track in proptest::collection::vec(prop_oneof![Just(0.0), 50.0f64..500.0], 0..64),
                      mean in 80.0f64..250.0, std in 1.0f64..60.0) {
            let st = SpeakerStats { mean, std };
            for mode in Normalization::ALL {
                let back = denormalize_f0(&normalize_f0(&track, &st, mode), &st, mode);
                for (a, b) in back.iter().zip(&track) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
