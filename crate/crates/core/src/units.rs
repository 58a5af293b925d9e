//! Discrete content units and the run-length dedup/inflate codec.
//!
//! A [`UnitSequence`] holds one unit id per 20 ms frame. Collapsing adjacent
//! repeats yields a [`DedupedUnits`] sequence plus the run lengths in
//! [`Durations`]; [`inflate`] expands them back to frame rate.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::emotion::Emotion;

/// Duration of a single unit frame in milliseconds.
pub const FRAME_MS: u32 = 20;

#[derive(Debug, thiserror::Error)]
pub enum UnitsError {
    #[error("length mismatch: {units} units but {durations} durations")]
    LengthMismatch { units: usize, durations: usize },
    #[error("duration at index {index} is zero")]
    ZeroDuration { index: usize },
    #[error("parse error at token {position}: {token:?} is not a non-negative integer")]
    Parse { position: usize, token: String },
    #[error("unit id {id} at token {position} is outside the vocabulary of size {size}")]
    OutOfVocab { position: usize, id: u32, size: u32 },
    #[error("adjacent units at index {index} are equal")]
    NotDeduped { index: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Content vocabulary with reserved special-token ids above it.
///
/// Ids `[0, size)` are units. `PAD`, `BOS`, `EOS`, `MASK` and one token per
/// emotion follow in that order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitVocab {
    size: u32,
}

impl UnitVocab {
    pub fn new(size: u32) -> Self {
        assert!(size > 0, "vocabulary size must be positive");
        UnitVocab { size }
    }

    /// Number of content ids (K).
    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn pad(&self) -> u32 {
        self.size
    }

    pub fn bos(&self) -> u32 {
        self.size + 1
    }

    pub fn eos(&self) -> u32 {
        self.size + 2
    }

    pub fn mask(&self) -> u32 {
        self.size + 3
    }

    pub fn emotion_token(&self, emotion: Emotion) -> u32 {
        self.size + 4 + emotion.index() as u32
    }

    /// Total number of token ids including every special symbol.
    pub fn total(&self) -> u32 {
        self.size + 4 + Emotion::ALL.len() as u32
    }

    pub fn is_content(&self, id: u32) -> bool {
        id < self.size
    }
}

/// Frame-rate unit ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitSequence(Vec<u32>);

impl UnitSequence {
    pub fn new(units: Vec<u32>) -> Self {
        UnitSequence(units)
    }

    /// Builds a sequence, rejecting ids outside `vocab`.
    pub fn with_vocab(units: Vec<u32>, vocab: &UnitVocab) -> Result<Self, UnitsError> {
        if let Some((position, &id)) = units.iter().enumerate().find(|(_, &u)| u >= vocab.size()) {
            return Err(UnitsError::OutOfVocab { position, id, size: vocab.size() });
        }
        Ok(UnitSequence(units))
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }

    pub fn truncate(&mut self, len: usize) {
        self.0.truncate(len);
    }
}

/// Unit ids with no two adjacent entries equal.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DedupedUnits(Vec<u32>);

impl DedupedUnits {
    pub fn new(units: Vec<u32>) -> Result<Self, UnitsError> {
        if let Some(index) = units.windows(2).position(|w| w[0] == w[1]) {
            return Err(UnitsError::NotDeduped { index });
        }
        Ok(DedupedUnits(units))
    }

    /// Collapses adjacent duplicates instead of rejecting them.
    pub fn collapse(mut units: Vec<u32>) -> Self {
        units.dedup();
        DedupedUnits(units)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

/// Per-unit run lengths in frames; every entry is at least one.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Durations(Vec<u32>);

impl Durations {
    pub fn new(frames: Vec<u32>) -> Result<Self, UnitsError> {
        if let Some(index) = frames.iter().position(|&d| d == 0) {
            return Err(UnitsError::ZeroDuration { index });
        }
        Ok(Durations(frames))
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.0.iter().map(|&d| d as usize).sum()
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

/// Collapses adjacent repeats into runs.
pub fn dedup(seq: &UnitSequence) -> (DedupedUnits, Durations) {
    let mut units = Vec::new();
    let mut frames: Vec<u32> = Vec::new();
    for &u in seq.as_slice() {
        match units.last() {
            Some(&last) if last == u => *frames.last_mut().unwrap() += 1,
            _ => {
                units.push(u);
                frames.push(1);
            }
        }
    }
    (DedupedUnits(units), Durations(frames))
}

/// Expands runs back to frame rate.
pub fn inflate(units: &DedupedUnits, durations: &Durations) -> Result<UnitSequence, UnitsError> {
    inflate_ids(units.as_slice(), durations.as_slice()).map(UnitSequence)
}

/// Inflates raw id/duration slices; used where the ids are not guaranteed deduped.
pub fn inflate_ids(units: &[u32], durations: &[u32]) -> Result<Vec<u32>, UnitsError> {
    if units.len() != durations.len() {
        return Err(UnitsError::LengthMismatch { units: units.len(), durations: durations.len() });
    }
    let mut out = Vec::with_capacity(durations.iter().map(|&d| d as usize).sum());
    for (index, (&u, &d)) in units.iter().zip(durations).enumerate() {
        if d == 0 {
            return Err(UnitsError::ZeroDuration { index });
        }
        out.extend(std::iter::repeat_n(u, d as usize));
    }
    Ok(out)
}

/// Parses whitespace-separated non-negative integers. Lines starting with
/// `#` are comments.
pub fn parse_units(text: &str, vocab: Option<&UnitVocab>) -> Result<UnitSequence, UnitsError> {
    let mut units = Vec::new();
    let tokens = text.lines().filter(|l| !l.trim_start().starts_with('#')).flat_map(str::split_whitespace);
    for (i, token) in tokens.enumerate() {
        let position = i + 1;
        let id: u32 = token
            .parse()
            .map_err(|_| UnitsError::Parse { position, token: token.to_string() })?;
        if let Some(v) = vocab {
            if id >= v.size() {
                return Err(UnitsError::OutOfVocab { position, id, size: v.size() });
            }
        }
        units.push(id);
    }
    Ok(UnitSequence(units))
}

pub fn format_units(ids: &[u32]) -> String {
    let mut s = ids.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(" ");
    s.push('\n');
    s
}

pub fn read_units(path: impl AsRef<Path>, vocab: Option<&UnitVocab>) -> Result<UnitSequence, UnitsError> {
    let text = fs::read_to_string(path)?;
    parse_units(&text, vocab)
}

pub fn write_units(path: impl AsRef<Path>, seq: &UnitSequence) -> Result<(), UnitsError> {
    fs::write(path, format_units(seq.as_slice()))?;
    Ok(())
}

/// Round-half-up to a whole number of frames, never below one.
pub fn round_frames(raw: f64) -> u32 {
    if !raw.is_finite() || raw < 1.0 {
        return 1;
    }
    (raw + 0.5).floor() as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(v: &[u32]) -> UnitSequence {
        UnitSequence::new(v.to_vec())
    }

    #[test]
    fn dedup_examples() {
        let (d, dur) = dedup(&seq(&[0, 0, 0, 1, 1, 2]));
        assert_eq!(d.as_slice(), &[0, 1, 2]);
        assert_eq!(dur.as_slice(), &[3, 2, 1]);

        let (d, dur) = dedup(&seq(&[]));
        assert!(d.is_empty() && dur.is_empty());

        let (d, dur) = dedup(&seq(&[7, 7, 5, 7]));
        assert_eq!(d.as_slice(), &[7, 5, 7]);
        assert_eq!(dur.as_slice(), &[2, 1, 1]);
    }

    #[test]
    fn inflate_examples() {
        let d = DedupedUnits::new(vec![0, 1, 2]).unwrap();
        let dur = Durations::new(vec![3, 2, 1]).unwrap();
        assert_eq!(inflate(&d, &dur).unwrap().as_slice(), &[0, 0, 0, 1, 1, 2]);
        assert!(inflate(&DedupedUnits::default(), &Durations::default()).unwrap().is_empty());
        let d = DedupedUnits::new(vec![4]).unwrap();
        let dur = Durations::new(vec![5]).unwrap();
        assert_eq!(inflate(&d, &dur).unwrap().as_slice(), &[4; 5]);
    }

    #[test]
    fn inflate_errors() {
        assert!(matches!(inflate_ids(&[1, 2], &[1]), Err(UnitsError::LengthMismatch { .. })));
        assert!(matches!(inflate_ids(&[1, 2], &[1, 0]), Err(UnitsError::ZeroDuration { index: 1 })));
        assert!(Durations::new(vec![2, 0]).is_err());
        assert!(DedupedUnits::new(vec![3, 3]).is_err());
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_units("0 0 1", None).unwrap().as_slice(), &[0, 0, 1]);
        assert!(parse_units("", None).unwrap().is_empty());
        assert_eq!(parse_units("# note 7\n3 4\n5", None).unwrap().as_slice(), &[3, 4, 5]);
        match parse_units("0 x 1", None) {
            Err(UnitsError::Parse { position, token }) => {
                assert_eq!(position, 2);
                assert_eq!(token, "x");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_units("1 64", Some(&UnitVocab::new(64))),
            Err(UnitsError::OutOfVocab { position: 2, id: 64, .. })
        ));
        assert!(parse_units("-1", None).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.txt");
        let s = seq(&[3, 3, 9, 0]);
        write_units(&path, &s).unwrap();
        assert_eq!(read_units(&path, None).unwrap(), s);
        write_units(&path, &seq(&[])).unwrap();
        assert!(read_units(&path, None).unwrap().is_empty());
    }

    #[test]
    fn vocab_specials_disjoint() {
        let v = UnitVocab::new(64);
        let mut ids = vec![v.pad(), v.bos(), v.eos(), v.mask()];
        ids.extend(Emotion::ALL.iter().map(|&e| v.emotion_token(e)));
        assert!(ids.iter().all(|&i| i >= 64 && i < v.total()));
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), ids.len());
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(round_frames(2.5), 3);
        assert_eq!(round_frames(0.2), 1);
        assert_eq!(round_frames(3.2), 3);
        assert_eq!(round_frames(f64::NAN), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn inflate_inverts_dedup(v in proptest::collection::vec(0u32..6, 0..512)) {
            let s = UnitSequence::new(v);
            let (d, dur) = dedup(&s);
            prop_assert_eq!(dur.total_frames(), s.len());
            prop_assert_eq!(inflate(&d, &dur).unwrap(), s);
        }

        #[test]
        fn dedup_of_deduped_is_all_ones(v in proptest::collection::vec(0u32..6, 0..128)) {
            let (d, _) = dedup(&UnitSequence::new(v));
            let (d2, dur2) = dedup(&UnitSequence::new(d.as_slice().to_vec()));
            prop_assert_eq!(d2, d);
            prop_assert!(dur2.as_slice().iter().all(|&x| x == 1));
        }

        #[test]
        fn text_round_trip(v in proptest::collection::vec(0u32..1000, 0..64)) {
            let s = UnitSequence::new(v);
            prop_assert_eq!(parse_units(&format_units(s.as_slice()), None).unwrap(), s);
        }
    }
}
