//! Finite-difference gradient checks over every layer kind and the three
//! trainable models, run in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::nn::gradcheck::{check_layer, layer_catalog};
use crate::nn::{grad_check, GradCheckReport, Graph, NnError, ParamStore, Segments, Var};
use crate::prosody::duration::DurationNet;
use crate::prosody::f0::{f0_loss, F0Net};
use crate::prosody::{DurationCnnConfig, F0Example, F0ModelConfig, F0Targets};
use crate::translator::train::{batch_loss, Item};
use crate::translator::{Scheme, TranslatorConfig, TranslatorError, TranslatorModel};
use crate::Emotion;

pub const GRAD_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;
/// Step for the convolutional models, kept small so ReLU kinks are rarely
/// straddled.
const MODEL_EPS: f64 = 1e-5;
/// The translator has tiny attention-key gradients that need a wider step
/// to rise above rounding noise.
const TRANSLATOR_EPS: f64 = 1e-4;
/// Coordinates perturbed per parameter tensor of a full model.
const MODEL_COORDS: usize = 24;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
}

impl GradCheckEntry {
    fn from_report(name: impl Into<String>, r: &GradCheckReport) -> Self {
        GradCheckEntry { name: name.into(), max_rel_error: r.max_rel_error, coordinates: r.coordinates }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }
}

fn as_nn(e: TranslatorError) -> NnError {
    match e {
        TranslatorError::Nn(n) => n,
        other => NnError::Shape(other.to_string()),
    }
}

pub fn layer_checks(seed: u64) -> Result<Vec<GradCheckEntry>, NnError> {
    layer_catalog()
        .iter()
        .enumerate()
        .map(|(i, spec)| Ok(GradCheckEntry::from_report(format!("layer/{}", spec.kind()), &check_layer(spec, seed + i as u64, EPS)?)))
        .collect()
}

pub fn translator_check(scheme: Scheme, seed: u64) -> Result<GradCheckEntry, NnError> {
    let cfg = TranslatorConfig {
        scheme,
        vocab_size: 8,
        dim: 8,
        ffn: 16,
        layers: 1,
        heads: 2,
        dropout: 0.0,
        emotions: vec![Emotion::Neutral, Emotion::Amused],
        beam: 1,
    };
    let model = TranslatorModel::new(cfg, seed).map_err(as_nn)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = |n: usize| -> Vec<u32> { (0..n).map(|_| rng.random_range(0..8)).collect() };
    let sources = [seq(4), seq(3), seq(5)];
    let targets = [seq(3), seq(4), seq(2)];
    let emotions = [Emotion::Amused, Emotion::Neutral, Emotion::Amused];
    let items: Vec<Item<'_>> = (0..3)
        .map(|i| Ok(Item { input: model.encoder_input(&sources[i])?, target: &targets[i], emotion: Some(emotions[i]) }))
        .collect::<Result<_, TranslatorError>>()
        .map_err(as_nn)?;
    let params: ParamStore<f64> = model.params.cast();
    let report = grad_check(&params, |g| batch_loss(&model, g, &items).map(|(l, _)| l).map_err(as_nn), TRANSLATOR_EPS, Some(MODEL_COORDS))?;
    Ok(GradCheckEntry::from_report(format!("model/translator_{}", scheme.as_str()), &report))
}

pub fn f0_check(seed: u64) -> Result<GradCheckEntry, NnError> {
    let cfg = F0ModelConfig { vocab: 8, unit_dim: 4, emotion_dim: 3, channels: 6, kernel: 3, layers: 2, ..F0ModelConfig::default() };
    let d = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let net = F0Net::build(&cfg, d, &mut store, &mut rng);
    let examples: Vec<F0Example> = [(5usize, Emotion::Neutral), (4, Emotion::Sleepy)]
        .iter()
        .map(|&(n, emotion)| {
            let voiced: Vec<f64> = (0..n).map(|t| if t == 1 { 0.0 } else { 1.0 }).collect();
            let soft = (0..n * d).map(|j| if voiced[j / d] > 0.0 { rng.random_range(0.0..1.0) } else { 0.0 }).collect();
            F0Example {
                units: (0..n).map(|_| rng.random_range(0..8)).collect(),
                emotion,
                speaker: 0,
                targets: F0Targets { d, soft, voiced, clamped: 0 },
                f0_hz: vec![100.0; n],
            }
        })
        .collect();
    let batch: Vec<&F0Example> = examples.iter().collect();
    let report = grad_check(&store, |g| f0_loss(&net, g, &batch), MODEL_EPS, Some(MODEL_COORDS))?;
    Ok(GradCheckEntry::from_report("model/f0_cnn", &report))
}

pub fn duration_check(seed: u64) -> Result<GradCheckEntry, NnError> {
    let cfg = DurationCnnConfig { vocab: 8, embed_dim: 4, channels: 6, kernel: 3, dropout: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let net = DurationNet::build(&cfg, &mut store, &mut rng);
    let segments = Segments::from_lengths([4, 6]);
    let ids: Vec<u32> = (0..10).map(|_| rng.random_range(0..8)).collect();
    let target: Vec<f64> = (0..10).map(|_| rng.random_range(1..6) as f64).collect();
    let loss = |g: &mut Graph<'_, f64>| -> Result<Var, NnError> {
        let y = net.forward(g, &ids, &segments)?;
        g.mse(y, target.clone())
    };
    let report = grad_check(&store, loss, MODEL_EPS, Some(MODEL_COORDS))?;
    Ok(GradCheckEntry::from_report("model/duration_cnn", &report))
}

/// Every layer kind, the translator under each sharing scheme, and both
/// prosody networks.
pub fn grad_check_suite(seed: u64) -> Result<Vec<GradCheckEntry>, NnError> {
    let mut out = layer_checks(seed)?;
    for scheme in Scheme::ALL {
        out.push(translator_check(scheme, seed)?);
    }
    out.push(f0_check(seed)?);
    out.push(duration_check(seed)?);
    Ok(out)
}
