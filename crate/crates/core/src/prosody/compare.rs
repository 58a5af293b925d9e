//! Side-by-side comparisons of prosody model variants on one data split.

use serde::{Deserialize, Serialize};

use super::bins::{BinStrategy, DecodeRule};
use super::data::{f0_examples, fit_bins};
use super::duration::{
    duration_metrics, predict_durations, train_duration_cnn, train_ngram, DurationCnnConfig, DurationMetrics, DurationModel,
};
use super::f0::{train_f0, F0ModelConfig};
use super::stats::Normalization;
use super::ProsodyError;
use crate::corpus::Utterance;
use crate::nn::{derive_seed, TrainConfig};
use crate::units::{DedupedUnits, Durations};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0GridRow {
    pub strategy: BinStrategy,
    pub normalization: Normalization,
    pub rule: DecodeRule,
    /// Voiced-frame MAE on the test split, in Hz.
    pub mae_hz: f64,
}

/// Trains one F0 model per (strategy, normalization) and scores it with
/// both decode rules: 12 rows in a fixed order.
pub fn f0_grid(
    train: &[Utterance],
    valid: &[Utterance],
    test: &[Utterance],
    d: usize,
    blur_sigma: f64,
    config: &F0ModelConfig,
    tcfg: &TrainConfig,
) -> Result<Vec<F0GridRow>, ProsodyError> {
    let mut rows = Vec::with_capacity(12);
    for strategy in [BinStrategy::Uniform, BinStrategy::Adaptive] {
        for normalization in Normalization::ALL {
            let bins = fit_bins(train, strategy, d, normalization)?;
            let tr = f0_examples(train, &bins, blur_sigma)?;
            let va = f0_examples(valid, &bins, blur_sigma)?;
            let te = f0_examples(test, &bins, blur_sigma)?;
            let (model, _) = train_f0(&tr, &va, config.clone(), bins, tcfg)?;
            for rule in [DecodeRule::Argmax, DecodeRule::WeightedAverage] {
                rows.push(F0GridRow { strategy, normalization, rule, mae_hz: model.mae(&te, rule)? });
            }
        }
    }
    Ok(rows)
}

pub fn f0_grid_tsv(rows: &[F0GridRow]) -> String {
    let mut s = String::from("strategy\tnormalization\tdecode_rule\tmae_hz\n");
    for r in rows {
        s.push_str(&format!("{}\t{}\t{}\t{:.4}\n", r.strategy, r.normalization.as_str(), r.rule, r.mae_hz));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationRow {
    pub model: String,
    pub metrics: DurationMetrics,
}

/// Unit-weighted duration metrics of `model` over `data`; sampling models
/// draw with a per-utterance seed derived from `seed`.
pub fn evaluate_durations(
    model: &DurationModel,
    data: &[(DedupedUnits, Durations)],
    seed: u64,
) -> Result<DurationMetrics, ProsodyError> {
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for (i, (u, d)) in data.iter().enumerate() {
        pred.extend(predict_durations(model, u, Some(derive_seed(seed, i as u64)))?.into_inner());
        gold.extend_from_slice(d.as_slice());
    }
    duration_metrics(&pred, &gold)
}

/// CNN, 5-gram, 3-gram and 1-gram models trained on `train`, scored on `test`.
pub fn duration_comparison(
    train: &[(DedupedUnits, Durations)],
    valid: &[(DedupedUnits, Durations)],
    test: &[(DedupedUnits, Durations)],
    config: &DurationCnnConfig,
    tcfg: &TrainConfig,
) -> Result<Vec<DurationRow>, ProsodyError> {
    let (cnn, _) = train_duration_cnn(train, valid, config.clone(), tcfg)?;
    let mut models = vec![DurationModel::Cnn(cnn)];
    for n in [5, 3, 1] {
        models.push(DurationModel::Ngram(train_ngram(train, n)?));
    }
    models
        .iter()
        .map(|m| Ok(DurationRow { model: m.variant(), metrics: evaluate_durations(m, test, tcfg.seed)? }))
        .collect()
}
