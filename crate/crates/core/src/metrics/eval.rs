//! Pipeline evaluation: translation, duration and F0 metrics per pair,
//! aggregated overall, per target emotion and as a macro average.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{bleu, content_recovery, uer, CompensatedSum, MetricsError, BLEU_EPSILON};
use crate::corpus::{ParallelPair, SpeakerId};
use crate::emotion::Emotion;
use crate::prosody::{
    duration_metrics, f0_mae_voiced, predict_durations, BinSpec, DecodeRule, DurationModel, F0Model, ProsodyError,
};
use crate::translator::{translate_batch, TranslatorError, TranslatorModel};
use crate::units::{dedup, inflate_ids, DedupedUnits, Durations, UnitsError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("model mismatch: {0}")]
    Mismatch(String),
    #[error("no evaluation pairs")]
    Empty,
    #[error("pair {pair}: {source}")]
    Metric { pair: String, source: MetricsError },
    #[error(transparent)]
    Translator(#[from] TranslatorError),
    #[error(transparent)]
    Prosody(#[from] ProsodyError),
    #[error(transparent)]
    Units(#[from] UnitsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything evaluation needs from one parallel pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub id: String,
    pub source_units: DedupedUnits,
    pub source_emotion: Emotion,
    pub target_units: DedupedUnits,
    pub target_durations: Durations,
    pub target_emotion: Emotion,
    pub speaker: SpeakerId,
    pub target_f0: Vec<f64>,
}

impl EvalPair {
    pub fn from_pair(p: &ParallelPair) -> Self {
        let (source_units, _) = dedup(&p.source.units);
        let (target_units, target_durations) = dedup(&p.target.units);
        EvalPair {
            id: format!("{}__{}", p.source.id, p.target.id),
            source_units,
            source_emotion: p.source.emotion,
            target_units,
            target_durations,
            target_emotion: p.target.emotion,
            speaker: p.target.speaker,
            target_f0: p.target.prosody.values().to_vec(),
        }
    }
}

/// Unit translation stage.
pub trait TranslationSystem {
    fn translate_pairs(&self, pairs: &[EvalPair]) -> Result<Vec<DedupedUnits>, EvalError>;
    fn vocab_size(&self) -> Option<u32> {
        None
    }
}

/// Duration stage; `seed` drives sampling models.
pub trait DurationSystem {
    fn durations(&self, units: &DedupedUnits, pair: &EvalPair, seed: u64) -> Result<Durations, EvalError>;
}

/// F0 stage over frame-rate units.
pub trait F0System {
    fn f0_batch(&self, frames: &[Vec<u32>], pairs: &[EvalPair]) -> Result<Vec<Vec<f64>>, EvalError>;
    fn bin_spec(&self) -> Option<&BinSpec> {
        None
    }
}

impl TranslationSystem for TranslatorModel {
    fn translate_pairs(&self, pairs: &[EvalPair]) -> Result<Vec<DedupedUnits>, EvalError> {
        let batch: Vec<(&DedupedUnits, Emotion)> = pairs.iter().map(|p| (&p.source_units, p.target_emotion)).collect();
        Ok(translate_batch(self, &batch)?)
    }

    fn vocab_size(&self) -> Option<u32> {
        Some(self.config.vocab_size)
    }
}

impl DurationSystem for DurationModel {
    fn durations(&self, units: &DedupedUnits, _: &EvalPair, seed: u64) -> Result<Durations, EvalError> {
        Ok(predict_durations(self, units, Some(seed))?)
    }
}

/// An F0 model paired with the rule used to decode its activations.
pub struct DecodedF0<'a> {
    pub model: &'a F0Model,
    pub rule: DecodeRule,
}

impl F0System for DecodedF0<'_> {
    fn f0_batch(&self, frames: &[Vec<u32>], pairs: &[EvalPair]) -> Result<Vec<Vec<f64>>, EvalError> {
        let batch: Vec<_> = frames.iter().zip(pairs).map(|(f, p)| (f.as_slice(), p.target_emotion, p.speaker)).collect();
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(32) {
            out.extend(self.model.predict_batch(chunk, self.rule)?);
        }
        Ok(out)
    }

    fn bin_spec(&self) -> Option<&BinSpec> {
        Some(&self.model.bins)
    }
}

/// Ground-truth passthrough for every stage.
#[derive(Clone, Copy, Debug, Default)]
pub struct Oracle;

impl TranslationSystem for Oracle {
    fn translate_pairs(&self, pairs: &[EvalPair]) -> Result<Vec<DedupedUnits>, EvalError> {
        Ok(pairs.iter().map(|p| p.target_units.clone()).collect())
    }
}

impl DurationSystem for Oracle {
    fn durations(&self, units: &DedupedUnits, pair: &EvalPair, _: u64) -> Result<Durations, EvalError> {
        if units != &pair.target_units {
            return Err(EvalError::Mismatch("oracle durations only exist for the target units".into()));
        }
        Ok(pair.target_durations.clone())
    }
}

impl F0System for Oracle {
    fn f0_batch(&self, _: &[Vec<u32>], pairs: &[EvalPair]) -> Result<Vec<Vec<f64>>, EvalError> {
        Ok(pairs.iter().map(|p| p.target_f0.clone()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub seed: u64,
    pub bleu_max_n: usize,
    /// Ids treated as vocalizations by content recovery.
    pub reserved: Range<u32>,
    /// Expected content vocabulary of the translator.
    pub vocab_size: u32,
    /// Expected quantizer of the F0 model, when one is pinned.
    pub bins: Option<BinSpec>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { seed: 0, bleu_max_n: 4, reserved: 48..64, vocab_size: 64, bins: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub id: String,
    pub source_emotion: Emotion,
    pub target_emotion: Emotion,
    pub hypothesis_len: usize,
    pub reference_len: usize,
    pub uer: f64,
    pub bleu: f64,
    pub content_recovery: Option<f64>,
    pub f0_mae_hz: Option<f64>,
    pub duration_mae_frames: f64,
    pub acc_0ms: f64,
    pub acc_20ms: f64,
    pub acc_40ms: f64,
}

/// Means of the per-pair values; optional metrics average over the pairs
/// that define them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub pairs: usize,
    pub uer: f64,
    pub bleu: f64,
    pub content_recovery: Option<f64>,
    pub f0_mae_hz: Option<f64>,
    pub duration_mae_frames: f64,
    pub acc_0ms: f64,
    pub acc_20ms: f64,
    pub acc_40ms: f64,
}

impl MetricSummary {
    pub fn of<'a>(results: impl IntoIterator<Item = &'a PairResult>) -> Self {
        let mut s: [CompensatedSum; 8] = Default::default();
        let mut n = 0;
        for r in results {
            n += 1;
            s[0].add(r.uer);
            s[1].add(r.bleu);
            if let Some(c) = r.content_recovery {
                s[2].add(c);
            }
            if let Some(f) = r.f0_mae_hz {
                s[3].add(f);
            }
            s[4].add(r.duration_mae_frames);
            s[5].add(r.acc_0ms);
            s[6].add(r.acc_20ms);
            s[7].add(r.acc_40ms);
        }
        let m = |i: usize| s[i].mean().unwrap_or(0.0);
        MetricSummary {
            pairs: n,
            uer: m(0),
            bleu: m(1),
            content_recovery: s[2].mean(),
            f0_mae_hz: s[3].mean(),
            duration_mae_frames: m(4),
            acc_0ms: m(5),
            acc_20ms: m(6),
            acc_40ms: m(7),
        }
    }

    /// Unweighted mean of several summaries.
    pub fn macro_average<'a>(parts: impl IntoIterator<Item = &'a MetricSummary>) -> Self {
        let parts: Vec<&MetricSummary> = parts.into_iter().collect();
        let avg = |f: &dyn Fn(&MetricSummary) -> f64| super::mean(parts.iter().map(|p| f(p))).unwrap_or(0.0);
        let avg_opt = |f: &dyn Fn(&MetricSummary) -> Option<f64>| super::mean(parts.iter().filter_map(|p| f(p)));
        MetricSummary {
            pairs: parts.iter().map(|p| p.pairs).sum(),
            uer: avg(&|p| p.uer),
            bleu: avg(&|p| p.bleu),
            content_recovery: avg_opt(&|p| p.content_recovery),
            f0_mae_hz: avg_opt(&|p| p.f0_mae_hz),
            duration_mae_frames: avg(&|p| p.duration_mae_frames),
            acc_0ms: avg(&|p| p.acc_0ms),
            acc_20ms: avg(&|p| p.acc_20ms),
            acc_40ms: avg(&|p| p.acc_40ms),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu_smoothing: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub voiced_frames: usize,
    pub duration_units: usize,
    pub aggregate: MetricSummary,
    pub per_emotion: BTreeMap<Emotion, MetricSummary>,
    pub macro_average: MetricSummary,
    pub pairs: Vec<PairResult>,
}

fn metric<T>(pair: &EvalPair, r: Result<T, MetricsError>) -> Result<T, EvalError> {
    r.map_err(|source| EvalError::Metric { pair: pair.id.clone(), source })
}

/// Runs translation on each source and scores it against the target;
/// durations and F0 are predicted from the target's own units so that
/// their errors line up frame by frame with the reference.
pub fn evaluate_pipeline(
    translator: &dyn TranslationSystem,
    durations: &dyn DurationSystem,
    f0: &dyn F0System,
    pairs: &[EvalPair],
    cfg: &EvalConfig,
    config_echo: serde_json::Value,
) -> Result<EvalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(v) = translator.vocab_size() {
        if v != cfg.vocab_size {
            return Err(EvalError::Mismatch(format!("translator vocabulary {v} != expected {}", cfg.vocab_size)));
        }
    }
    if let (Some(want), Some(have)) = (&cfg.bins, f0.bin_spec()) {
        if !want.same_quantizer(have) {
            return Err(EvalError::Mismatch("F0 model bins differ from the expected bin spec".into()));
        }
    }
    let hyps = translator.translate_pairs(pairs)?;
    let frames: Vec<Vec<u32>> = pairs
        .iter()
        .map(|p| inflate_ids(p.target_units.as_slice(), p.target_durations.as_slice()))
        .collect::<Result<_, _>>()?;
    let f0s = f0.f0_batch(&frames, pairs)?;
    let mut results = Vec::with_capacity(pairs.len());
    let (mut voiced_frames, mut duration_units) = (0, 0);
    for (i, ((p, hyp), pred_f0)) in pairs.iter().zip(&hyps).zip(&f0s).enumerate() {
        let reference = p.target_units.as_slice();
        let seed = crate::nn::derive_seed(cfg.seed, i as u64);
        let dur = durations.durations(&p.target_units, p, seed)?;
        let dm = duration_metrics(dur.as_slice(), p.target_durations.as_slice())?;
        duration_units += dm.count;
        let f0_mae = match f0_mae_voiced(pred_f0, &p.target_f0) {
            Ok(v) => Some(v),
            Err(ProsodyError::NoVoicedFrames(_)) => None,
            Err(e) => return Err(e.into()),
        };
        voiced_frames += p.target_f0.iter().filter(|&&f| f > 0.0).count();
        let recovery = match content_recovery(p.source_units.as_slice(), hyp.as_slice(), &cfg.reserved) {
            Ok(v) => Some(v),
            Err(MetricsError::EmptySource) => None,
            Err(e) => return metric(p, Err(e)),
        };
        results.push(PairResult {
            id: p.id.clone(),
            source_emotion: p.source_emotion,
            target_emotion: p.target_emotion,
            hypothesis_len: hyp.len(),
            reference_len: reference.len(),
            uer: metric(p, uer(reference, hyp.as_slice()))?,
            bleu: metric(p, bleu(&[reference], hyp.as_slice(), cfg.bleu_max_n))?,
            content_recovery: recovery,
            f0_mae_hz: f0_mae,
            duration_mae_frames: dm.mae_frames,
            acc_0ms: dm.acc_0ms,
            acc_20ms: dm.acc_20ms,
            acc_40ms: dm.acc_40ms,
        });
    }
    let mut per_emotion = BTreeMap::new();
    for e in Emotion::ALL {
        let part: Vec<&PairResult> = results.iter().filter(|r| r.target_emotion == e).collect();
        if !part.is_empty() {
            per_emotion.insert(e, MetricSummary::of(part));
        }
    }
    Ok(EvalReport {
        bleu_smoothing: format!(
            "sentence BLEU, max n {}, zero n-gram matches for n >= 2 replaced by {BLEU_EPSILON:e} / n-gram count",
            cfg.bleu_max_n
        ),
        seed: cfg.seed,
        config: config_echo,
        voiced_frames,
        duration_units,
        aggregate: MetricSummary::of(&results),
        macro_average: MetricSummary::macro_average(per_emotion.values()),
        per_emotion,
        pairs: results,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(text)?)
    }

    /// One tab-separated row per pair.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "pair\tsource_emotion\ttarget_emotion\thyp_len\tref_len\tuer\tbleu\tcontent_recovery\tf0_mae_hz\tduration_mae_frames\tacc_0ms\tacc_20ms\tacc_40ms\n",
        );
        for r in &self.pairs {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.id,
                r.source_emotion,
                r.target_emotion,
                r.hypothesis_len,
                r.reference_len,
                r.uer,
                r.bleu,
                opt(r.content_recovery),
                opt(r.f0_mae_hz),
                r.duration_mae_frames,
                r.acc_0ms,
                r.acc_20ms,
                r.acc_40ms
            );
        }
        out
    }

    /// Rating manifest: pair id, audio path, and the emotions a rater
    /// chooses from.
    pub fn subjective_manifest(&self, audio_dir: &str, candidates: &[Emotion]) -> String {
        let list: Vec<&str> = candidates.iter().map(|e| e.as_str()).collect();
        let mut out = String::from("# utt_id\taudio_path\tcandidate_emotions\n");
        for r in &self.pairs {
            let _ = writeln!(out, "{}\t{}/{}.wav\t{}", r.id, audio_dir.trim_end_matches('/'), r.id, list.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, make_parallel_pairs, CorpusConfig};

    fn pairs() -> Vec<EvalPair> {
        let cfg = CorpusConfig { n_transcripts: 4, ..CorpusConfig::default() };
        let corpus = generate_corpus(&cfg, 3).unwrap();
        make_parallel_pairs(&corpus).iter().map(EvalPair::from_pair).collect()
    }

    #[test]
    fn oracle_is_perfect() {
        let p = pairs();
        let r = evaluate_pipeline(&Oracle, &Oracle, &Oracle, &p, &EvalConfig::default(), serde_json::Value::Null).unwrap();
        assert_eq!(r.aggregate.uer, 0.0);
        assert_eq!(r.aggregate.bleu, 100.0);
        assert_eq!(r.aggregate.content_recovery, Some(1.0));
        assert_eq!(r.aggregate.f0_mae_hz, Some(0.0));
        assert_eq!(r.aggregate.duration_mae_frames, 0.0);
        assert_eq!(r.aggregate.acc_0ms, 1.0);
        assert_eq!(r.pairs.len(), p.len());
    }

    struct Shift;

    impl F0System for Shift {
        fn f0_batch(&self, _: &[Vec<u32>], pairs: &[EvalPair]) -> Result<Vec<Vec<f64>>, EvalError> {
            Ok(pairs
                .iter()
                .enumerate()
                .map(|(i, p)| p.target_f0.iter().map(|&f| if f > 0.0 { f + i as f64 } else { 0.0 }).collect())
                .collect())
        }
    }

    #[test]
    fn aggregate_is_mean_of_pairs() {
        let p = pairs();
        let r = evaluate_pipeline(&Oracle, &Oracle, &Shift, &p, &EvalConfig::default(), serde_json::Value::Null).unwrap();
        let want = (0..p.len()).map(|i| i as f64).sum::<f64>() / p.len() as f64;
        assert!((r.aggregate.f0_mae_hz.unwrap() - want).abs() < 1e-9);
        for (e, s) in &r.per_emotion {
            let part: Vec<f64> = r.pairs.iter().filter(|x| x.target_emotion == *e).filter_map(|x| x.f0_mae_hz).collect();
            assert!((s.f0_mae_hz.unwrap() - part.iter().sum::<f64>() / part.len() as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn report_serialization_is_stable() {
        let p = pairs();
        let run = || {
            evaluate_pipeline(&Oracle, &Oracle, &Shift, &p, &EvalConfig { seed: 5, ..Default::default() }, serde_json::json!({"a": 1}))
                .unwrap()
        };
        let a = run().to_json().unwrap();
        assert_eq!(a, run().to_json().unwrap());
        assert_eq!(EvalReport::from_json(&a).unwrap(), run());
        let tsv = run().to_tsv();
        assert_eq!(tsv.lines().count(), p.len() + 1);
        assert!(tsv.lines().skip(1).all(|l| l.split('\t').count() == 13));
        let m = run().subjective_manifest("audio/", &Emotion::ALL);
        assert!(m.lines().nth(1).unwrap().contains("audio/"));
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        struct Wide;
        impl TranslationSystem for Wide {
            fn translate_pairs(&self, pairs: &[EvalPair]) -> Result<Vec<DedupedUnits>, EvalError> {
                Oracle.translate_pairs(pairs)
            }
            fn vocab_size(&self) -> Option<u32> {
                Some(100)
            }
        }
        let err = evaluate_pipeline(&Wide, &Oracle, &Oracle, &pairs(), &EvalConfig::default(), serde_json::Value::Null);
        assert!(matches!(err, Err(EvalError::Mismatch(_))));
    }
}
