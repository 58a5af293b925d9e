//! Input corruption for denoising pretraining.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::TranslatorError;
use crate::units::UnitVocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Mean span length replaced by a single mask during infilling.
    pub infill_poisson_lambda: f64,
    /// Probability that a span starts at a given position; 0 disables infilling.
    pub infill_p: f64,
    pub token_mask_p: f64,
    pub random_mask_p: f64,
    pub sentence_permutation: bool,
    /// Unit that delimits words for permutation. Without one, permutation is skipped.
    pub separator: Option<u32>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            infill_poisson_lambda: 3.5,
            infill_p: 0.05,
            token_mask_p: 0.3,
            random_mask_p: 0.1,
            sentence_permutation: true,
            separator: Some(0),
        }
    }
}

impl NoiseConfig {
    /// No corruption at all.
    pub fn none() -> Self {
        NoiseConfig {
            infill_p: 0.0,
            token_mask_p: 0.0,
            random_mask_p: 0.0,
            sentence_permutation: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), TranslatorError> {
        for (name, p) in [("infill_p", self.infill_p), ("token_mask_p", self.token_mask_p), ("random_mask_p", self.random_mask_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TranslatorError::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(self.infill_poisson_lambda > 0.0 && self.infill_poisson_lambda.is_finite()) {
            return Err(TranslatorError::Config(format!(
                "infill lambda must be positive, got {}",
                self.infill_poisson_lambda
            )));
        }
        Ok(())
    }
}

pub fn sample_span_len(rng: &mut impl Rng, lambda: f64) -> usize {
    Poisson::new(lambda).expect("lambda checked positive").sample(rng) as usize
}

fn permute_words(seq: &mut Vec<u32>, sep: u32, rng: &mut ChaCha8Rng) {
    let mut words: Vec<Vec<u32>> = Vec::new();
    let mut layout: Vec<Option<usize>> = Vec::new();
    let mut i = 0;
    while i < seq.len() {
        if seq[i] == sep {
            layout.push(None);
            i += 1;
        } else {
            let start = i;
            while i < seq.len() && seq[i] != sep {
                i += 1;
            }
            layout.push(Some(words.len()));
            words.push(seq[start..i].to_vec());
        }
    }
    words.shuffle(rng);
    let mut out = Vec::with_capacity(seq.len());
    let mut next = words.into_iter();
    for slot in layout {
        match slot {
            None => out.push(sep),
            Some(_) => out.extend(next.next().expect("one word per slot")),
        }
    }
    *seq = out;
}

/// Corrupts a content sequence: sentence permutation, span infilling,
/// then token and random masking of the surviving units.
pub fn corrupt(seq: &[u32], cfg: &NoiseConfig, vocab: &UnitVocab, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = vocab.mask();
    let mut words = seq.to_vec();
    if cfg.sentence_permutation {
        if let Some(sep) = cfg.separator {
            permute_words(&mut words, sep, &mut rng);
        }
    }
    let mut out = Vec::with_capacity(words.len());
    let mut i = 0;
    while i < words.len() {
        if cfg.infill_p > 0.0 && rng.random_bool(cfg.infill_p) {
            let span = sample_span_len(&mut rng, cfg.infill_poisson_lambda);
            out.push(mask);
            if span == 0 {
                out.push(words[i]);
                i += 1;
            } else {
                i += span;
            }
            continue;
        }
        let u = words[i];
        let r: f64 = rng.random();
        out.push(if r < cfg.token_mask_p {
            mask
        } else if r < cfg.token_mask_p + cfg.random_mask_p {
            rng.random_range(0..vocab.size())
        } else {
            u
        });
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq() -> Vec<u32> {
        vec![0, 5, 6, 7, 0, 8, 9, 0, 10, 11, 12, 0]
    }

    #[test]
    fn no_noise_is_identity() {
        let v = UnitVocab::new(64);
        for s in 0..20 {
            assert_eq!(corrupt(&seq(), &NoiseConfig::none(), &v, s), seq());
        }
    }

    #[test]
    fn full_token_mask() {
        let v = UnitVocab::new(64);
        let cfg = NoiseConfig { token_mask_p: 1.0, ..NoiseConfig::none() };
        assert!(corrupt(&seq(), &cfg, &v, 1).iter().all(|&u| u == v.mask()));
    }

    #[test]
    fn span_length_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let total: usize = (0..n).map(|_| sample_span_len(&mut rng, 3.5)).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 3.5).abs() < 0.1, "{mean}");
    }

    #[test]
    fn permutation_keeps_separators_and_words() {
        let v = UnitVocab::new(64);
        let cfg = NoiseConfig { sentence_permutation: true, ..NoiseConfig::none() };
        let mut moved = false;
        for s in 0..10 {
            let out = corrupt(&seq(), &cfg, &v, s);
            assert_eq!(out.len(), seq().len());
            let zeros: Vec<usize> = out.iter().enumerate().filter(|(_, &u)| u == 0).map(|(i, _)| i).collect();
            let expected: Vec<usize> = seq().iter().enumerate().filter(|(_, &u)| u == 0).map(|(i, _)| i).collect();
            assert_eq!(zeros.len(), expected.len());
            let mut a = out.clone();
            let mut b = seq();
            a.sort();
            b.sort();
            assert_eq!(a, b);
            moved |= out != seq();
        }
        assert!(moved);
    }

    #[test]
    fn infill_replaces_spans_with_one_mask() {
        let v = UnitVocab::new(64);
        let cfg = NoiseConfig { infill_p: 0.3, ..NoiseConfig::none() };
        let input: Vec<u32> = (1..41).collect();
        let out = corrupt(&input, &cfg, &v, 5);
        assert!(out.contains(&v.mask()));
        // every surviving unit keeps its relative order
        let kept: Vec<u32> = out.iter().copied().filter(|&u| u != v.mask()).collect();
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn deterministic_per_seed() {
        let v = UnitVocab::new(64);
        let cfg = NoiseConfig::default();
        assert_eq!(corrupt(&seq(), &cfg, &v, 9), corrupt(&seq(), &cfg, &v, 9));
    }
}
