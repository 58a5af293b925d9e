//! Unit duration models: a convolutional regressor and n-gram statistics
//! with back-off.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ProsodyError;
use crate::nn::{
    fit, Conv1d, Embedding, Graph, LayerNorm, Linear, NnError, ParamStore, Real, Segments, TrainConfig, TrainHistory, Var,
};
use crate::units::{round_frames, DedupedUnits, Durations, FRAME_MS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DurationCnnConfig {
    /// Number of unit ids accepted as input.
    pub vocab: usize,
    pub embed_dim: usize,
    pub channels: usize,
    pub kernel: usize,
    pub dropout: f64,
}

impl Default for DurationCnnConfig {
    fn default() -> Self {
        DurationCnnConfig { vocab: 64, embed_dim: 64, channels: 128, kernel: 3, dropout: 0.1 }
    }
}

/// Layer handles of the duration regressor; parameters live in a store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationNet {
    pub embed: Embedding,
    pub conv1: Conv1d,
    pub norm1: LayerNorm,
    pub conv2: Conv1d,
    pub norm2: LayerNorm,
    pub head: Linear,
    pub dropout: f64,
}

impl DurationNet {
    pub fn build<T: Real>(cfg: &DurationCnnConfig, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Self {
        DurationNet {
            embed: Embedding::new(store, "dur.embed", cfg.vocab, cfg.embed_dim, rng),
            conv1: Conv1d::new(store, "dur.conv1", cfg.embed_dim, cfg.channels, cfg.kernel, rng),
            norm1: LayerNorm::new(store, "dur.norm1", cfg.channels),
            conv2: Conv1d::new(store, "dur.conv2", cfg.channels, cfg.channels, cfg.kernel, rng),
            norm2: LayerNorm::new(store, "dur.norm2", cfg.channels),
            head: Linear::new(store, "dur.head", cfg.channels, 1, rng),
            dropout: cfg.dropout,
        }
    }

    /// Raw frame predictions `[total, 1]` for packed unit ids.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, ids: &[u32], segments: &Segments) -> Result<Var, NnError> {
        let mut x = self.embed.forward(g, ids)?;
        for (conv, norm) in [(&self.conv1, &self.norm1), (&self.conv2, &self.norm2)] {
            x = conv.forward(g, x, segments)?;
            x = g.relu(x)?;
            x = norm.forward(g, x)?;
            x = g.dropout(x, self.dropout)?;
        }
        self.head.forward(g, x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DurationCnn {
    pub config: DurationCnnConfig,
    pub net: DurationNet,
    pub params: ParamStore<f32>,
}

impl DurationCnn {
    pub fn new(config: DurationCnnConfig, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let net = DurationNet::build(&config, &mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        DurationCnn { config, net, params }
    }

    fn check_ids(&self, units: &[u32]) -> Result<(), ProsodyError> {
        match units.iter().find(|&&u| u as usize >= self.config.vocab) {
            Some(&u) => Err(ProsodyError::Units(crate::units::UnitsError::OutOfVocab {
                position: 0,
                id: u,
                size: self.config.vocab as u32,
            })),
            None => Ok(()),
        }
    }

    /// Unrounded predictions for several sequences in one pass.
    pub fn predict_raw_batch(&self, batch: &[&[u32]]) -> Result<Vec<Vec<f64>>, ProsodyError> {
        let ids: Vec<u32> = batch.iter().flat_map(|s| s.iter().copied()).collect();
        self.check_ids(&ids)?;
        if ids.is_empty() {
            return Ok(batch.iter().map(|_| Vec::new()).collect());
        }
        let segments = Segments::from_lengths(batch.iter().map(|s| s.len()));
        let mut g = Graph::new(&self.params);
        let y = self.net.forward(&mut g, &ids, &segments)?;
        let out = g.value(y).to_f64_vec();
        Ok(segments.iter().map(|(s, l)| out[s..s + l].to_vec()).collect())
    }

    pub fn predict_batch(&self, batch: &[&[u32]]) -> Result<Vec<Durations>, ProsodyError> {
        self.predict_raw_batch(batch)?
            .into_iter()
            .map(|raw| Ok(Durations::new(raw.into_iter().map(round_frames).collect())?))
            .collect()
    }
}

/// Frame statistics of one context.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgramStat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NgramRepr {
    n: usize,
    global: NgramStat,
    tables: Vec<Vec<(Vec<u32>, NgramStat)>>,
}

/// Mean and sample deviation of the duration of the last unit of every
/// observed `k`-gram, `k = 1..=n`, plus a global fallback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "NgramRepr", from = "NgramRepr")]
pub struct NgramModel {
    pub n: usize,
    pub global: NgramStat,
    tables: Vec<HashMap<Vec<u32>, NgramStat>>,
}

impl From<NgramModel> for NgramRepr {
    fn from(m: NgramModel) -> Self {
        let tables = m
            .tables
            .into_iter()
            .map(|t| {
                let mut v: Vec<_> = t.into_iter().collect();
                v.sort_by(|a, b| a.0.cmp(&b.0));
                v
            })
            .collect();
        NgramRepr { n: m.n, global: m.global, tables }
    }
}

impl From<NgramRepr> for NgramModel {
    fn from(r: NgramRepr) -> Self {
        NgramModel { n: r.n, global: r.global, tables: r.tables.into_iter().map(|t| t.into_iter().collect()).collect() }
    }
}

fn stat(values: &[f64]) -> NgramStat {
    let n = values.len() as f64;
    let mean = crate::metrics::mean(values.iter().copied()).expect("non-empty");
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    NgramStat { mean: mean.max(1.0), std, count: values.len() }
}

pub fn train_ngram(data: &[(DedupedUnits, Durations)], n: usize) -> Result<NgramModel, ProsodyError> {
    if data.is_empty() || n == 0 {
        return Err(ProsodyError::Empty);
    }
    let mut raw: Vec<HashMap<Vec<u32>, Vec<f64>>> = vec![HashMap::new(); n];
    let mut all = Vec::new();
    for (units, durs) in data {
        let u = units.as_slice();
        for (i, &d) in durs.as_slice().iter().enumerate() {
            all.push(d as f64);
            for k in 1..=n.min(i + 1) {
                raw[k - 1].entry(u[i + 1 - k..=i].to_vec()).or_default().push(d as f64);
            }
        }
    }
    if all.is_empty() {
        return Err(ProsodyError::Empty);
    }
    let tables = raw.into_iter().map(|t| t.into_iter().map(|(k, v)| (k, stat(&v))).collect()).collect();
    Ok(NgramModel { n, global: stat(&all), tables })
}

impl NgramModel {
    /// Statistics for position `i`: the longest observed context ending at
    /// `i`, backing off one unit at a time down to the global statistic.
    pub fn lookup(&self, units: &[u32], i: usize) -> &NgramStat {
        for k in (1..=self.n.min(i + 1)).rev() {
            if let Some(s) = self.tables[k - 1].get(&units[i + 1 - k..=i]) {
                return s;
            }
        }
        &self.global
    }

    pub fn sample(&self, units: &[u32], seed: u64) -> Durations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..units.len())
            .map(|i| {
                let s = self.lookup(units, i);
                let v = if s.std > 0.0 { Normal::new(s.mean, s.std).expect("finite").sample(&mut rng) } else { s.mean };
                round_frames(v.max(1.0))
            })
            .collect();
        Durations::new(frames).expect("clamped to at least one frame")
    }

    pub fn entries(&self, k: usize) -> usize {
        self.tables.get(k.wrapping_sub(1)).map_or(0, |t| t.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DurationModel {
    Cnn(DurationCnn),
    Ngram(NgramModel),
}

impl DurationModel {
    pub fn variant(&self) -> String {
        match self {
            DurationModel::Cnn(_) => "cnn".into(),
            DurationModel::Ngram(m) => format!("ngram{}", m.n),
        }
    }
}

/// One positive duration per unit. The n-gram variant samples and needs a seed.
pub fn predict_durations(model: &DurationModel, units: &DedupedUnits, seed: Option<u64>) -> Result<Durations, ProsodyError> {
    match model {
        DurationModel::Cnn(m) => Ok(m.predict_batch(&[units.as_slice()])?.remove(0)),
        DurationModel::Ngram(m) => {
            let seed = seed.ok_or(ProsodyError::MissingSeed)?;
            Ok(m.sample(units.as_slice(), seed))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DurationMetrics {
    pub mae_frames: f64,
    pub acc_0ms: f64,
    pub acc_20ms: f64,
    pub acc_40ms: f64,
    pub count: usize,
}

/// MAE in frames and the fraction of units within 0/20/40 ms of the target.
pub fn duration_metrics(pred: &[u32], target: &[u32]) -> Result<DurationMetrics, ProsodyError> {
    if pred.len() != target.len() {
        return Err(ProsodyError::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(ProsodyError::Empty);
    }
    let n = pred.len() as f64;
    let diffs: Vec<u64> = pred.iter().zip(target).map(|(&p, &t)| (p as i64 - t as i64).unsigned_abs()).collect();
    let within = |ms: u64| diffs.iter().filter(|&&d| d * FRAME_MS as u64 <= ms).count() as f64 / n;
    Ok(DurationMetrics {
        mae_frames: diffs.iter().sum::<u64>() as f64 / n,
        acc_0ms: within(0),
        acc_20ms: within(20),
        acc_40ms: within(40),
        count: pred.len(),
    })
}

fn pack(data: &[(DedupedUnits, Durations)], idx: &[usize]) -> (Vec<u32>, Vec<f32>, Segments) {
    let mut ids = Vec::new();
    let mut target = Vec::new();
    for &i in idx {
        ids.extend_from_slice(data[i].0.as_slice());
        target.extend(data[i].1.as_slice().iter().map(|&d| d as f32));
    }
    let segments = Segments::from_lengths(idx.iter().map(|&i| data[i].0.len()));
    (ids, target, segments)
}

/// MAE (frames) of rounded CNN predictions.
pub fn cnn_mae(model: &DurationCnn, data: &[(DedupedUnits, Durations)]) -> Result<f64, ProsodyError> {
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for chunk in data.chunks(64) {
        let seqs: Vec<&[u32]> = chunk.iter().map(|(u, _)| u.as_slice()).collect();
        for (p, (_, t)) in model.predict_batch(&seqs)?.iter().zip(chunk) {
            pred.extend_from_slice(p.as_slice());
            target.extend_from_slice(t.as_slice());
        }
    }
    Ok(duration_metrics(&pred, &target)?.mae_frames)
}

/// Minimizes the MSE between raw outputs and target frame counts, stopping
/// early on validation MAE.
pub fn train_duration_cnn(
    train: &[(DedupedUnits, Durations)],
    valid: &[(DedupedUnits, Durations)],
    config: DurationCnnConfig,
    tcfg: &TrainConfig,
) -> Result<(DurationCnn, TrainHistory), ProsodyError> {
    let train: Vec<_> = train.iter().filter(|(u, _)| !u.is_empty()).cloned().collect();
    if train.is_empty() {
        return Err(ProsodyError::Empty);
    }
    let mut model = DurationCnn::new(config, tcfg.seed);
    for (u, _) in &train {
        model.check_ids(u.as_slice())?;
    }
    let valid: Vec<_> = if valid.is_empty() { train.clone() } else { valid.to_vec() };
    let net = model.net.clone();
    let cfg = model.config.clone();
    let mut err = None;
    let history = fit(
        &mut model.params,
        tcfg,
        train.len(),
        |g, idx| {
            let (ids, target, segments) = pack(&train, idx);
            let y = net.forward(g, &ids, &segments)?;
            g.mse(y, target)
        },
        |params| {
            let probe = DurationCnn { config: cfg.clone(), net: net.clone(), params: params.clone() };
            cnn_mae(&probe, &valid).map_err(|e| {
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

#[cfg(test)]
mod tests {
    use super::*;

    fn item(u: &[u32], d: &[u32]) -> (DedupedUnits, Durations) {
        (DedupedUnits::new(u.to_vec()).unwrap(), Durations::new(d.to_vec()).unwrap())
    }

    #[test]
    fn metric_examples() {
        let m = duration_metrics(&[3, 4, 5], &[3, 4, 5]).unwrap();
        assert_eq!((m.mae_frames, m.acc_0ms, m.acc_20ms, m.acc_40ms), (0.0, 1.0, 1.0, 1.0));
        let m = duration_metrics(&[4, 3, 6], &[3, 4, 5]).unwrap();
        assert_eq!((m.mae_frames, m.acc_0ms, m.acc_20ms, m.acc_40ms), (1.0, 0.0, 1.0, 1.0));
        assert!(duration_metrics(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(round_frames(2.5), 3);
        assert_eq!(round_frames(0.2), 1);
    }

    #[test]
    fn unigram_statistics() {
        let m = train_ngram(&[item(&[5], &[3]), item(&[5], &[5])], 1).unwrap();
        let s = m.lookup(&[5], 0);
        assert_eq!((s.mean, s.count), (4.0, 2));
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
        let m = train_ngram(&[item(&[5, 1], &[4, 2]), item(&[5, 2], &[4, 2])], 1).unwrap();
        assert_eq!(m.lookup(&[5], 0).std, 0.0);
        assert_eq!(m.sample(&[5, 5 + 1], 0).as_slice()[0], 4);
    }

    #[test]
    fn back_off_to_shorter_context() {
        let m = train_ngram(&[item(&[1, 2, 3], &[1, 2, 7]), item(&[9, 3], &[1, 5])], 3).unwrap();
        // unseen trigram (4,2,3) backs off to the bigram (2,3)
        assert_eq!(m.lookup(&[4, 2, 3], 2).mean, 7.0);
        // unseen bigram (8,3) backs off to the unigram 3: mean of {7, 5}
        assert_eq!(m.lookup(&[8, 3], 1).mean, 6.0);
        // unseen unigram falls back to the global statistic
        assert_eq!(m.lookup(&[42], 0).count, 5);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<NgramModel>(&json).unwrap(), m);
    }

    #[test]
    fn cnn_learns_constant_durations() {
        let data: Vec<_> = (0..40u32)
            .map(|i| {
                let u: Vec<u32> = (0..6).map(|j| (i * 7 + j * 3) % 20 + 1).collect();
                let u = DedupedUnits::collapse(u);
                let d = vec![4; u.len()];
                (u, Durations::new(d).unwrap())
            })
            .collect();
        let cfg = DurationCnnConfig { vocab: 32, embed_dim: 16, channels: 32, ..Default::default() };
        let tcfg = TrainConfig { lr: 3e-3, batch_size: 8, max_epochs: 40, patience: 40, ..TrainConfig::default() };
        let (model, _) = train_duration_cnn(&data[..32], &data[32..], cfg, &tcfg).unwrap();
        assert!(cnn_mae(&model, &data[32..]).unwrap() < 0.1);
    }
}
