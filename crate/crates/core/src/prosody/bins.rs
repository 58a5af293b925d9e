//! F0 quantization: bin construction, blurred soft targets and decoding.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::stats::{Normalization, SpeakerStats};
use super::ProsodyError;
use crate::corpus::SpeakerId;

pub const DEFAULT_BINS: usize = 50;
/// Gaussian blur width of the soft targets, in bins.
pub const BLUR_SIGMA: f64 = 1.0;
/// Bins below this activation are ignored by weighted-average decoding.
pub const ACTIVATION_FLOOR: f64 = 1e-4;
pub const VOICING_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinStrategy {
    Uniform,
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeRule {
    Argmax,
    WeightedAverage,
}

macro_rules! str_enum {
    ($t:ty, $($v:path => $s:literal $(| $alt:literal)*),+) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $($v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $t {
            type Err = ProsodyError;
            fn from_str(s: &str) -> Result<Self, ProsodyError> {
                match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
                    $($s $(| $alt)* => Ok($v),)+
                    _ => Err(ProsodyError::UnknownMode(s.to_string())),
                }
            }
        }
    };
}

str_enum!(BinStrategy, BinStrategy::Uniform => "uniform", BinStrategy::Adaptive => "adaptive");
str_enum!(DecodeRule, DecodeRule::Argmax => "argmax", DecodeRule::WeightedAverage => "weighted_average" | "w_avg" | "wavg");

impl BinStrategy {
    pub const ALL: [BinStrategy; 2] = [BinStrategy::Uniform, BinStrategy::Adaptive];
}

impl DecodeRule {
    pub const ALL: [DecodeRule; 2] = [DecodeRule::Argmax, DecodeRule::WeightedAverage];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub strategy: BinStrategy,
    pub d: usize,
    /// `d + 1` strictly ascending edges in normalized space.
    pub edges: Vec<f64>,
    pub representatives: Vec<f64>,
    pub normalization: Normalization,
    pub speaker_stats: BTreeMap<SpeakerId, SpeakerStats>,
}

/// Builds `d` bins over normalized voiced training values.
///
/// Uniform bins split `[min, max]` evenly; adaptive edges sit at the
/// empirical `k/d` quantiles. A value equal to an inner edge belongs to the
/// lower bin. Representatives are the mean training value of each bin
/// (the midpoint when a bin is empty).
pub fn make_bins(
    values: &[f64],
    strategy: BinStrategy,
    d: usize,
    normalization: Normalization,
    speaker_stats: BTreeMap<SpeakerId, SpeakerStats>,
) -> Result<BinSpec, ProsodyError> {
    if d < 2 {
        return Err(ProsodyError::BinCount(d));
    }
    if values.is_empty() {
        return Err(ProsodyError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let edges = match strategy {
        BinStrategy::Uniform => {
            let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
            (0..=d).map(|k| if k == d { hi } else { lo + (hi - lo) * k as f64 / d as f64 }).collect()
        }
        BinStrategy::Adaptive => {
            let mut distinct = sorted.clone();
            distinct.dedup();
            if distinct.len() < d {
                return Err(ProsodyError::TooFewDistinct { needed: d, found: distinct.len() });
            }
            let n = sorted.len();
            let mut edges = vec![lo];
            for k in 1..d {
                let p = ((k * n) as f64 / d as f64).round() as usize;
                let p = p.clamp(1, n - 1);
                let mut e = 0.5 * (sorted[p - 1] + sorted[p]);
                let prev = *edges.last().unwrap();
                if e <= prev {
                    // heavy ties: move to the next distinct value above the previous edge
                    e = match distinct.iter().find(|&&v| v > prev) {
                        Some(&v) => v,
                        None => return Err(ProsodyError::TooFewDistinct { needed: d, found: distinct.len() }),
                    };
                }
                edges.push(e);
            }
            if hi <= *edges.last().unwrap() {
                return Err(ProsodyError::TooFewDistinct { needed: d, found: distinct.len() });
            }
            edges.push(hi);
            edges
        }
    };
    let mut spec = BinSpec {
        strategy,
        d,
        representatives: Vec::new(),
        edges,
        normalization,
        speaker_stats,
    };
    let mut sums = vec![(0.0, 0usize); d];
    for &v in values {
        let (b, _) = spec.bin_of(v);
        sums[b].0 += v;
        sums[b].1 += 1;
    }
    spec.representatives = sums
        .iter()
        .enumerate()
        .map(|(b, &(s, c))| {
            let (l, r) = (spec.edges[b], spec.edges[b + 1]);
            if c == 0 {
                0.5 * (l + r)
            } else {
                (s / c as f64).clamp(l, r)
            }
        })
        .collect();
    Ok(spec)
}

impl BinSpec {
    /// Bin index of `v` and whether it had to be clamped into range.
    pub fn bin_of(&self, v: f64) -> (usize, bool) {
        if v < self.edges[0] {
            return (0, true);
        }
        if v > self.edges[self.d] {
            return (self.d - 1, true);
        }
        let k = self.edges[1..self.d].partition_point(|&e| e < v);
        (k, false)
    }

    pub fn stats(&self, speaker: SpeakerId) -> Result<&SpeakerStats, ProsodyError> {
        self.speaker_stats.get(&speaker).ok_or(ProsodyError::UnknownSpeaker(speaker))
    }

    pub fn max_half_width(&self) -> f64 {
        self.edges.windows(2).map(|w| 0.5 * (w[1] - w[0])).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), ProsodyError> {
        let bad = |m: &str| Err(ProsodyError::BinSpecMismatch(m.to_string()));
        if self.d < 2 || self.edges.len() != self.d + 1 || self.representatives.len() != self.d {
            return bad("bin count and table sizes disagree");
        }
        if self.edges.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("edges are not strictly ascending");
        }
        for (i, r) in self.representatives.iter().enumerate() {
            if !(self.edges[i] <= *r && *r <= self.edges[i + 1]) {
                return bad("representative outside its bin");
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bin spec serializes")
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<(), ProsodyError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn import(path: impl AsRef<Path>) -> Result<Self, ProsodyError> {
        let spec: BinSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Bin edges, representatives and normalization agree (speaker tables may differ).
    pub fn same_quantizer(&self, other: &BinSpec) -> bool {
        self.strategy == other.strategy
            && self.d == other.d
            && self.edges == other.edges
            && self.representatives == other.representatives
            && self.normalization == other.normalization
    }
}

/// Frame-major soft targets `[frames, d]` plus voicing targets.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Targets {
    pub d: usize,
    pub soft: Vec<f64>,
    pub voiced: Vec<f64>,
    /// Voiced values that fell outside the bin range.
    pub clamped: usize,
}

impl F0Targets {
    pub fn frames(&self) -> usize {
        self.voiced.len()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.soft[t * self.d..(t + 1) * self.d]
    }
}

/// One-hot bin targets blurred by a Gaussian of `sigma` bins (truncated at
/// three sigma, peak 1). Unvoiced frames get an all-zero row.
pub fn encode_f0_targets(track: &[Option<f64>], bins: &BinSpec, sigma: f64) -> F0Targets {
    let d = bins.d;
    let reach = if sigma > 0.0 { (3.0 * sigma).floor() as isize } else { 0 };
    let kernel: Vec<f64> = (-reach..=reach)
        .map(|o| if sigma > 0.0 { (-0.5 * (o as f64 / sigma).powi(2)).exp() } else { 1.0 })
        .collect();
    let mut soft = vec![0.0; track.len() * d];
    let mut voiced = vec![0.0; track.len()];
    let mut clamped = 0;
    for (t, v) in track.iter().enumerate() {
        let Some(v) = v else { continue };
        let (k, c) = bins.bin_of(*v);
        clamped += c as usize;
        voiced[t] = 1.0;
        let row = &mut soft[t * d..(t + 1) * d];
        for (j, w) in kernel.iter().enumerate() {
            let b = k as isize + j as isize - reach;
            if (0..d as isize).contains(&b) {
                row[b as usize] = *w;
            }
        }
    }
    F0Targets { d, soft, voiced, clamped }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &a) in row.iter().enumerate() {
        if a > row[best] {
            best = i;
        }
    }
    best
}

/// Normalized-space value of one activation row.
pub fn decode_frame(row: &[f64], bins: &BinSpec, rule: DecodeRule) -> f64 {
    let reps = &bins.representatives;
    match rule {
        DecodeRule::Argmax => reps[argmax(row)],
        DecodeRule::WeightedAverage => {
            let (mut num, mut den) = (0.0, 0.0);
            for (a, r) in row.iter().zip(reps) {
                if *a >= ACTIVATION_FLOOR {
                    num += a * r;
                    den += a;
                }
            }
            if den > 0.0 {
                num / den
            } else {
                reps[argmax(row)]
            }
        }
    }
}

/// Hz track from per-frame bin activations `[frames, d]` and voicing
/// probabilities; frames with voicing below 0.5 are unvoiced.
pub fn decode_f0(
    activations: &[f64],
    voicing: &[f64],
    bins: &BinSpec,
    rule: DecodeRule,
    speaker: SpeakerId,
) -> Result<Vec<f64>, ProsodyError> {
    if activations.len() != voicing.len() * bins.d {
        return Err(ProsodyError::LengthMismatch(activations.len(), voicing.len() * bins.d));
    }
    let stats = bins.stats(speaker)?;
    Ok(voicing
        .iter()
        .enumerate()
        .map(|(t, &p)| {
            if p < VOICING_THRESHOLD {
                return 0.0;
            }
            let v = decode_frame(&activations[t * bins.d..(t + 1) * bins.d], bins, rule);
            bins.normalization.invert(v, stats).max(f64::MIN_POSITIVE)
        })
        .collect())
}
