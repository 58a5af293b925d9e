//! Objective translation metrics and pipeline evaluation reports.

use std::collections::HashMap;
use std::ops::Range;

pub mod eval;

pub use eval::{evaluate_pipeline, DecodedF0, EvalConfig, EvalError, EvalPair, EvalReport, MetricSummary, Oracle, PairResult};

/// Smoothing constant substituted for zero n-gram matches at n >= 2.
pub const BLEU_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("source content is empty")]
    EmptySource,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no voiced frames in the reference track")]
    NoVoicedFrames,
}

/// Unit-cost Levenshtein distance.
pub fn levenshtein(a: &[u32], b: &[u32]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Unit error rate: edit distance normalised by the reference length.
/// May exceed 1 when the hypothesis is much longer than the reference.
pub fn uer(reference: &[u32], hypothesis: &[u32]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(levenshtein(reference, hypothesis) as f64 / reference.len() as f64)
}

fn ngram_counts(seq: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU in `[0, 100]` with clipped n-gram precisions, brevity
/// penalty against the closest reference length, and add-epsilon smoothing
/// of zero precisions for `n >= 2`.
pub fn bleu(references: &[&[u32]], hypothesis: &[u32], max_n: usize) -> Result<f64, MetricsError> {
    if references.iter().all(|r| r.is_empty()) {
        return Err(MetricsError::EmptyReference);
    }
    if hypothesis.is_empty() || max_n == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let hyp = ngram_counts(hypothesis, n);
        let refs: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
        let total = hypothesis.len().saturating_sub(n - 1);
        let clipped: usize = hyp
            .iter()
            .map(|(g, &c)| c.min(refs.iter().map(|r| r.get(g).copied().unwrap_or(0)).max().unwrap_or(0)))
            .sum();
        let p = if clipped > 0 {
            clipped as f64 / total as f64
        } else if n == 1 {
            return Ok(0.0);
        } else if total == 0 {
            BLEU_EPSILON
        } else {
            BLEU_EPSILON / total as f64
        };
        log_sum += p.ln();
    }
    let c = hypothesis.len();
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(c), l))
        .unwrap();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok((100.0 * bp * (log_sum / max_n as f64).exp()).clamp(0.0, 100.0))
}

pub fn lcs_len(a: &[u32], b: &[u32]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Drops reserved ids and collapses the adjacent repeats this leaves behind.
pub fn strip_reserved(seq: &[u32], reserved: &Range<u32>) -> Vec<u32> {
    let mut out: Vec<u32> = seq.iter().copied().filter(|u| !reserved.contains(u)).collect();
    out.dedup();
    out
}

/// Fraction of source content units recovered (by LCS) in the hypothesis
/// once vocalization units are removed from both.
pub fn content_recovery(source: &[u32], hypothesis: &[u32], reserved: &Range<u32>) -> Result<f64, MetricsError> {
    let src = strip_reserved(source, reserved);
    if src.is_empty() {
        return Err(MetricsError::EmptySource);
    }
    let hyp = strip_reserved(hypothesis, reserved);
    Ok(lcs_len(&src, &hyp) as f64 / src.len() as f64)
}

/// Neumaier-compensated running sum, so means do not depend on summation order
/// beyond rounding of the final division.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
    count: usize,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.total() / self.count as f64)
    }
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut s = CompensatedSum::default();
    values.into_iter().for_each(|v| s.add(v));
    s.mean()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uer_examples() {
        assert_eq!(uer(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert!((uer(&[1, 2, 3], &[1, 3]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(uer(&[1], &[2, 3]).unwrap(), 2.0);
        assert_eq!(uer(&[], &[1]), Err(MetricsError::EmptyReference));
    }

    #[test]
    fn bleu_examples() {
        let r = [1u32, 2, 3, 4, 5];
        assert!((bleu(&[&r], &r, 4).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(bleu(&[&[1, 2, 3, 4]], &[5, 6, 7, 8], 4).unwrap(), 0.0);
        assert_eq!(bleu(&[&[1, 2, 3, 4]], &[], 4).unwrap(), 0.0);
        assert!(bleu(&[&[]], &[1], 4).is_err());
    }

    #[test]
    fn bleu_hand_case() {
        // ref [1,2,3,4], hyp [1,2,4]: p1 = 3/3, p2 = 1/2, p3 = eps/1, p4 = eps (no 4-grams);
        // BP = exp(1 - 4/3).
        let got = bleu(&[&[1, 2, 3, 4]], &[1, 2, 4], 4).unwrap();
        let want = 100.0 * (1.0f64 - 4.0 / 3.0).exp() * (0.5f64 * 1e-9 * 1e-9).powf(0.25);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn bleu_is_order_sensitive() {
        let r = [1u32, 2, 3, 4, 5, 6];
        let h = [1u32, 2, 4, 3, 5, 6];
        assert!(bleu(&[&r], &h, 4).unwrap() < 100.0);
    }

    #[test]
    fn content_recovery_examples() {
        let reserved = 48..64;
        assert_eq!(content_recovery(&[1, 2, 3, 4], &[1, 2, 3, 4, 48, 49, 48], &reserved).unwrap(), 1.0);
        assert_eq!(content_recovery(&[1, 2, 3, 4], &[1, 2, 4], &reserved).unwrap(), 0.75);
        assert_eq!(content_recovery(&[1, 2], &[2, 50, 2, 1], &reserved).unwrap(), 0.5);
        assert!(content_recovery(&[48], &[1], &reserved).is_err());
    }

    #[test]
    fn compensated_mean() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(mean(v).unwrap(), 0.5);
        assert_eq!(mean(std::iter::empty()), None);
    }
}
