//! Training data for the prosody models, built from corpus utterances.

use std::collections::BTreeMap;

use super::bins::{encode_f0_targets, make_bins, BinSpec, BinStrategy};
use super::f0::F0Example;
use super::stats::{fit_speaker_stats, normalize_f0, Normalization};
use super::ProsodyError;
use crate::corpus::Utterance;
use crate::units::{dedup, DedupedUnits, Durations};

/// Deduped units with their run lengths, one item per utterance.
pub fn duration_data<'a>(utts: impl IntoIterator<Item = &'a Utterance>) -> Vec<(DedupedUnits, Durations)> {
    utts.into_iter().map(|u| dedup(&u.units)).filter(|(u, _)| !u.is_empty()).collect()
}

/// Fits speaker statistics and bins on the voiced frames of `train`.
pub fn fit_bins(
    train: &[Utterance],
    strategy: BinStrategy,
    d: usize,
    normalization: Normalization,
) -> Result<BinSpec, ProsodyError> {
    let stats = fit_speaker_stats(train)?;
    let mut values = Vec::new();
    for u in train {
        let s = &stats[&u.speaker];
        values.extend(normalize_f0(u.prosody.values(), s, normalization).into_iter().flatten());
    }
    make_bins(&values, strategy, d, normalization, stats)
}

/// Encodes each utterance's F0 against `bins`; speakers without statistics
/// in `bins` are an error.
pub fn f0_examples(utts: &[Utterance], bins: &BinSpec, blur_sigma: f64) -> Result<Vec<F0Example>, ProsodyError> {
    utts.iter()
        .filter(|u| u.frames() > 0)
        .map(|u| {
            let stats = bins.stats(u.speaker)?;
            let norm = normalize_f0(u.prosody.values(), stats, bins.normalization);
            Ok(F0Example {
                units: u.units.as_slice().to_vec(),
                emotion: u.emotion,
                speaker: u.speaker,
                targets: encode_f0_targets(&norm, bins, blur_sigma),
                f0_hz: u.prosody.values().to_vec(),
            })
        })
        .collect()
}

/// Mean of the voiced frames of each track, averaged over tracks that have any.
pub fn mean_voiced(tracks: &[Vec<f64>]) -> Option<f64> {
    crate::metrics::mean(tracks.iter().filter_map(|t| crate::metrics::mean(t.iter().copied().filter(|&f| f > 0.0))))
}

/// Groups utterances by emotion, keeping corpus order within each group.
pub fn by_emotion(utts: &[Utterance]) -> BTreeMap<crate::Emotion, Vec<&Utterance>> {
    let mut m: BTreeMap<_, Vec<&Utterance>> = BTreeMap::new();
    for u in utts {
        m.entry(u.emotion).or_default().push(u);
    }
    m
}
