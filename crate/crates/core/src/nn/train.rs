use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::NnError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub clip_norm: Option<f64>,
    pub warmup_steps: u64,
    pub max_steps: Option<u64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            max_epochs: 50,
            patience: 5,
            clip_norm: Some(1.0),
            warmup_steps: 0,
            max_steps: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub steps: u64,
}

/// Tracks the best validation score and the parameters that produced it.
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    best_params: Option<ParamStore<f32>>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, best_params: None, bad_epochs: 0 }
    }

    /// Records a score (lower is better); returns `false` once patience runs out.
    pub fn observe(&mut self, epoch: usize, score: f64, params: &ParamStore<f32>) -> bool {
        if score < self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.best_params = Some(params.clone());
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        self.bad_epochs <= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn into_best(self) -> Option<ParamStore<f32>> {
        self.best_params
    }
}

/// Mixes a base seed with a counter (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Minibatch Adam with early stopping on a validation score.
///
/// `batch_loss` builds the scalar loss for the given item indices on a
/// training-mode graph; `validate` scores the current parameters (lower is
/// better). The best-scoring parameters are restored on return.
pub fn fit<F, V>(
    params: &mut ParamStore<f32>,
    cfg: &TrainConfig,
    n_items: usize,
    mut batch_loss: F,
    mut validate: V,
) -> Result<TrainHistory, NnError>
where
    F: FnMut(&mut Graph<'_, f32>, &[usize]) -> Result<Var, NnError>,
    V: FnMut(&ParamStore<f32>) -> Result<f64, NnError>,
{
    if n_items == 0 {
        return Err(NnError::EmptyData);
    }
    let mut adam = AdamState::new(params, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..n_items).collect();
    let batch = cfg.batch_size.max(1);
    'epochs: for epoch in 0..cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch) {
            if cfg.max_steps.is_some_and(|m| history.steps >= m) {
                break;
            }
            let mut grads = {
                let mut g = Graph::training(params, derive_seed(cfg.seed ^ 0xD80F, history.steps));
                let loss = batch_loss(&mut g, chunk)?;
                loss_sum += g.value(loss).item() as f64;
                g.backward(loss)?
            };
            if let Some(c) = cfg.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            adam.config.lr = if cfg.warmup_steps > 0 {
                cfg.lr * ((history.steps + 1) as f64 / cfg.warmup_steps as f64).min(1.0)
            } else {
                cfg.lr
            };
            adam_step(params, &grads, &mut adam)?;
            history.steps += 1;
            batches += 1;
        }
        let validation = validate(params)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            validation,
        });
        log::debug!("epoch {epoch}: train {:.4} valid {validation:.4}", loss_sum / batches.max(1) as f64);
        let keep_going = stopper.observe(epoch, validation, params);
        if !keep_going || cfg.max_steps.is_some_and(|m| history.steps >= m) {
            break 'epochs;
        }
    }
    history.best_epoch = stopper.best_epoch();
    history.best_validation = stopper.best();
    if let Some(best) = stopper.into_best() {
        *params = best;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn early_stopping_restores_best() {
        let mut p = ParamStore::<f32>::new();
        p.add("x", Tensor::scalar(0.0));
        let mut es = EarlyStopping::new(1);
        assert!(es.observe(0, 2.0, &p));
        p.get_mut(p.ids().next().unwrap()).data_mut()[0] = 5.0;
        assert!(es.observe(1, 3.0, &p));
        assert!(!es.observe(2, 4.0, &p));
        assert_eq!(es.best_epoch(), 0);
        assert_eq!(es.into_best().unwrap().get(p.ids().next().unwrap()).item(), 0.0);
    }

    #[test]
    fn fit_minimises_quadratic() {
        let mut p = ParamStore::<f32>::new();
        let x = p.add("x", Tensor::scalar(3.0));
        let cfg = TrainConfig { lr: 0.1, max_epochs: 200, patience: 200, batch_size: 1, ..TrainConfig::default() };
        let hist = fit(
            &mut p,
            &cfg,
            1,
            |g, _| {
                let v = g.param(x);
                let s = g.square(v)?;
                g.sum(s)
            },
            |ps| Ok((ps.get(x).item() as f64).powi(2)),
        )
        .unwrap();
        assert!(hist.best_validation < 1e-3, "{hist:?}");
    }
}
