//! Convolutional F0 estimator over frame-rate units, conditioned on emotion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bins::{decode_f0, BinSpec, DecodeRule, F0Targets};
use super::ProsodyError;
use crate::corpus::SpeakerId;
use crate::emotion::Emotion;
use crate::metrics::CompensatedSum;
use crate::nn::{fit, graph::sigmoid, Conv1d, Embedding, Graph, Linear, NnError, ParamStore, Real, Segments, TrainConfig, TrainHistory, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct F0ModelConfig {
    pub vocab: usize,
    pub unit_dim: usize,
    pub emotion_dim: usize,
    pub channels: usize,
    pub kernel: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Decoding rule used for the validation MAE that drives early stopping.
    pub select_rule: DecodeRule,
}

impl Default for F0ModelConfig {
    fn default() -> Self {
        F0ModelConfig {
            vocab: 64,
            unit_dim: 32,
            emotion_dim: 16,
            channels: 64,
            kernel: 7,
            layers: 6,
            dropout: 0.0,
            select_rule: DecodeRule::WeightedAverage,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Net {
    pub units: Embedding,
    pub emotions: Embedding,
    pub convs: Vec<Conv1d>,
    pub bins: Linear,
    pub voicing: Linear,
    pub dropout: f64,
}

impl F0Net {
    pub fn build<T: Real>(cfg: &F0ModelConfig, d: usize, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Self {
        let units = Embedding::new(store, "f0.units", cfg.vocab, cfg.unit_dim, rng);
        let emotions = Embedding::new(store, "f0.emotions", Emotion::ALL.len(), cfg.emotion_dim, rng);
        let mut convs = Vec::with_capacity(cfg.layers);
        let mut width = cfg.unit_dim + cfg.emotion_dim;
        for i in 0..cfg.layers {
            convs.push(Conv1d::new(store, &format!("f0.conv{i}"), width, cfg.channels, cfg.kernel, rng));
            width = cfg.channels;
        }
        F0Net {
            units,
            emotions,
            convs,
            bins: Linear::new(store, "f0.bins", width, d, rng),
            voicing: Linear::new(store, "f0.voicing", width, 1, rng),
            dropout: cfg.dropout,
        }
    }

    /// Bin logits `[total, d]` and voicing logits `[total, 1]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        units: &[u32],
        emotions: &[u32],
        segments: &Segments,
    ) -> Result<(Var, Var), NnError> {
        let u = self.units.forward(g, units)?;
        let e = self.emotions.forward(g, emotions)?;
        let mut x = g.concat_cols(&[u, e])?;
        for conv in &self.convs {
            x = conv.forward(g, x, segments)?;
            x = g.relu(x)?;
            x = g.dropout(x, self.dropout)?;
        }
        Ok((self.bins.forward(g, x)?, self.voicing.forward(g, x)?))
    }
}

/// One training utterance: frame-rate units, its emotion and speaker,
/// encoded targets and the reference F0 in Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Example {
    pub units: Vec<u32>,
    pub emotion: Emotion,
    pub speaker: SpeakerId,
    pub targets: F0Targets,
    pub f0_hz: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct F0Model {
    pub config: F0ModelConfig,
    pub bins: BinSpec,
    pub net: F0Net,
    pub params: ParamStore<f32>,
}

/// Per-frame outputs after the sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Activations {
    pub bins: Vec<f64>,
    pub voicing: Vec<f64>,
}

impl F0Model {
    pub fn new(config: F0ModelConfig, bins: BinSpec, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let net = F0Net::build(&config, bins.d, &mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        F0Model { config, bins, net, params }
    }

    fn check(&self, units: &[u32]) -> Result<(), ProsodyError> {
        if let Some(&u) = units.iter().find(|&&u| u as usize >= self.config.vocab) {
            return Err(ProsodyError::Units(crate::units::UnitsError::OutOfVocab {
                position: 0,
                id: u,
                size: self.config.vocab as u32,
            }));
        }
        Ok(())
    }

    pub fn activations_batch(&self, batch: &[(&[u32], Emotion)]) -> Result<Vec<F0Activations>, ProsodyError> {
        let units: Vec<u32> = batch.iter().flat_map(|(u, _)| u.iter().copied()).collect();
        self.check(&units)?;
        if units.is_empty() {
            return Ok(batch.iter().map(|_| F0Activations { bins: vec![], voicing: vec![] }).collect());
        }
        let emotions: Vec<u32> =
            batch.iter().flat_map(|(u, e)| std::iter::repeat_n(e.index() as u32, u.len())).collect();
        let segments = Segments::from_lengths(batch.iter().map(|(u, _)| u.len()));
        let mut g = Graph::new(&self.params);
        let (b, v) = self.net.forward(&mut g, &units, &emotions, &segments)?;
        let bins: Vec<f64> = g.value(b).data().iter().map(|&x| sigmoid(x).as_f64()).collect();
        let voicing: Vec<f64> = g.value(v).data().iter().map(|&x| sigmoid(x).as_f64()).collect();
        let d = self.bins.d;
        Ok(segments
            .iter()
            .map(|(s, l)| F0Activations { bins: bins[s * d..(s + l) * d].to_vec(), voicing: voicing[s..s + l].to_vec() })
            .collect())
    }

    /// Hz tracks for several utterances.
    pub fn predict_batch(
        &self,
        batch: &[(&[u32], Emotion, SpeakerId)],
        rule: DecodeRule,
    ) -> Result<Vec<Vec<f64>>, ProsodyError> {
        let acts = self.activations_batch(&batch.iter().map(|(u, e, _)| (*u, *e)).collect::<Vec<_>>())?;
        acts.iter()
            .zip(batch)
            .map(|(a, (_, _, s))| decode_f0(&a.bins, &a.voicing, &self.bins, rule, *s))
            .collect()
    }

    pub fn predict(&self, units: &[u32], emotion: Emotion, speaker: SpeakerId, rule: DecodeRule) -> Result<Vec<f64>, ProsodyError> {
        Ok(self.predict_batch(&[(units, emotion, speaker)], rule)?.remove(0))
    }

    /// Mean voiced-frame absolute error (Hz) over a dataset.
    pub fn mae(&self, data: &[F0Example], rule: DecodeRule) -> Result<f64, ProsodyError> {
        let mut total = CompensatedSum::default();
        for chunk in data.chunks(32) {
            let batch: Vec<_> = chunk.iter().map(|x| (x.units.as_slice(), x.emotion, x.speaker)).collect();
            for (pred, x) in self.predict_batch(&batch, rule)?.iter().zip(chunk) {
                for (p, t) in pred.iter().zip(&x.f0_hz) {
                    if *t > 0.0 {
                        total.add((p - t).abs());
                    }
                }
            }
        }
        total.mean().ok_or(ProsodyError::NoVoicedFrames(usize::MAX))
    }
}

pub(crate) fn f0_loss<T: Real>(net: &F0Net, g: &mut Graph<'_, T>, batch: &[&F0Example]) -> Result<Var, NnError> {
    let units: Vec<u32> = batch.iter().flat_map(|x| x.units.iter().copied()).collect();
    let emotions: Vec<u32> =
        batch.iter().flat_map(|x| std::iter::repeat_n(x.emotion.index() as u32, x.units.len())).collect();
    let segments = Segments::from_lengths(batch.iter().map(|x| x.units.len()));
    let (b, v) = net.forward(g, &units, &emotions, &segments)?;
    let soft: Vec<T> = batch.iter().flat_map(|x| x.targets.soft.iter().map(|&s| T::from_f64_lossy(s))).collect();
    let voiced: Vec<T> = batch.iter().flat_map(|x| x.targets.voiced.iter().map(|&s| T::from_f64_lossy(s))).collect();
    let lb = g.bce_with_logits(b, soft)?;
    let lv = g.bce_with_logits(v, voiced)?;
    g.add(lb, lv)
}

/// Minimizes the per-frame bin BCE (summed over bins) plus the voicing BCE,
/// stopping early on validation voiced-frame MAE.
pub fn train_f0(
    train: &[F0Example],
    valid: &[F0Example],
    config: F0ModelConfig,
    bins: BinSpec,
    tcfg: &TrainConfig,
) -> Result<(F0Model, TrainHistory), ProsodyError> {
    bins.validate()?;
    let train: Vec<&F0Example> = train.iter().filter(|x| !x.units.is_empty()).collect();
    if train.is_empty() {
        return Err(ProsodyError::Empty);
    }
    for x in train.iter().chain(valid.iter().collect::<Vec<_>>().iter()) {
        if x.targets.d != bins.d || x.targets.frames() != x.units.len() || x.f0_hz.len() != x.units.len() {
            return Err(ProsodyError::BinSpecMismatch(format!(
                "example with {} frames and {}-bin targets does not match {} bins",
                x.units.len(),
                x.targets.d,
                bins.d
            )));
        }
    }
    let mut model = F0Model::new(config, bins, tcfg.seed);
    for x in &train {
        model.check(&x.units)?;
    }
    let valid: Vec<F0Example> = if valid.is_empty() { train.iter().map(|x| (*x).clone()).collect() } else { valid.to_vec() };
    let net = model.net.clone();
    let (cfg, bins) = (model.config.clone(), model.bins.clone());
    let mut err = None;
    let history = fit(
        &mut model.params,
        tcfg,
        train.len(),
        |g, idx| {
            let batch: Vec<&F0Example> = idx.iter().map(|&i| train[i]).collect();
            f0_loss(&net, g, &batch)
        },
        |params| {
            let probe = F0Model { config: cfg.clone(), bins: bins.clone(), net: net.clone(), params: params.clone() };
            probe.mae(&valid, cfg.select_rule).map_err(|e| {
                let msg = e.to_string();
                err = Some(e);
                NnError::Shape(msg)
            })
        },
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok((model, history?))
}

/// Mean absolute error over frames where the reference is voiced.
pub fn f0_mae_voiced(pred_hz: &[f64], target_hz: &[f64]) -> Result<f64, ProsodyError> {
    if pred_hz.len() != target_hz.len() {
        return Err(ProsodyError::LengthMismatch(pred_hz.len(), target_hz.len()));
    }
    crate::metrics::mean(pred_hz.iter().zip(target_hz).filter(|(_, t)| **t > 0.0).map(|(p, t)| (p - t).abs()))
        .ok_or(ProsodyError::NoVoicedFrames(usize::MAX))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prosody::{encode_f0_targets, make_bins, normalize_f0, BinStrategy, Normalization, SpeakerStats};
    use std::collections::BTreeMap;

    #[test]
    fn mae_examples() {
        assert_eq!(f0_mae_voiced(&[100.0, 0.0], &[100.0, 0.0]).unwrap(), 0.0);
        assert_eq!(f0_mae_voiced(&[110.0, 0.0], &[100.0, 0.0]).unwrap(), 10.0);
        let got = f0_mae_voiced(&[105.0, 0.0, 90.0], &[100.0, 120.0, 100.0]).unwrap();
        assert!((got - (5.0 + 120.0 + 10.0) / 3.0).abs() < 1e-12);
        assert!(f0_mae_voiced(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn learns_constant_f0() {
        let stats = SpeakerStats { mean: 150.0, std: 10.0 };
        let mut map = BTreeMap::new();
        map.insert(0, stats);
        let train_vals: Vec<f64> = (0..200).map(|i| -2.0 + 4.0 * i as f64 / 199.0).collect();
        let bins = make_bins(&train_vals, BinStrategy::Uniform, 20, Normalization::MeanStd, map).unwrap();
        let data: Vec<F0Example> = (0..24u32)
            .map(|i| {
                let units: Vec<u32> = (0..30).map(|t| (i + t / 3) % 10).collect();
                let f0: Vec<f64> = units.iter().map(|&u| if u == 0 { 0.0 } else { 150.0 }).collect();
                let targets = encode_f0_targets(&normalize_f0(&f0, &stats, Normalization::MeanStd), &bins, 1.0);
                F0Example { units, emotion: Emotion::Neutral, speaker: 0, targets, f0_hz: f0 }
            })
            .collect();
        let cfg = F0ModelConfig { vocab: 10, unit_dim: 8, emotion_dim: 4, channels: 16, layers: 2, ..Default::default() };
        let tcfg = TrainConfig { lr: 3e-3, batch_size: 8, max_epochs: 60, patience: 60, ..TrainConfig::default() };
        let (model, _) = train_f0(&data[..20], &data[20..], cfg, bins, &tcfg).unwrap();
        // half a speaker sigma, in Hz
        assert!(model.mae(&data[20..], DecodeRule::WeightedAverage).unwrap() < 5.0);
    }
}
