use serde::{Deserialize, Serialize};

use super::graph::Gradients;
use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use super::NnError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| Tensor::zeros(t.shape().to_vec())).collect();
        AdamState { config, m: zeros(), v: zeros(), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are left
/// untouched and their moments are not decayed.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
) -> Result<(), NnError> {
    if grads.num_params() != params.len() || state.m.len() != params.len() {
        return Err(NnError::Shape("adam: gradient/state count does not match parameters".into()));
    }
    for id in params.ids() {
        if let Some(g) = grads.param(id) {
            if !g.is_finite() {
                return Err(NnError::NonFinite("adam gradient"));
            }
            if g.shape() != params.get(id).shape() {
                return Err(NnError::Shape(format!("adam: gradient shape for {}", params.name(id))));
            }
        }
    }
    state.step += 1;
    let cfg = &state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(cfg.beta1), T::from_f64_lossy(cfg.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let step_size = T::from_f64_lossy(cfg.lr / bc1);
    let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
    let eps = T::from_f64_lossy(cfg.eps);
    for id in params.ids() {
        let Some(g) = grads.param(id) else { continue };
        let i = id.index();
        let p = params.get_mut(id).data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + one_b1 * gj;
            v[j] = b2 * v[j] + one_b2 * gj * gj;
            p[j] -= step_size * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<T: Real>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Graph;

    fn scalar_grads(store: &ParamStore<f64>, x0_coeff: f64) -> Gradients<f64> {
        // loss = c * x  =>  dloss/dx = c
        let mut g = Graph::new(store);
        let x = g.param(store.ids().next().unwrap());
        let y = g.scale(x, x0_coeff).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = ParamStore::<f64>::new();
        store.add("x", Tensor::scalar(1.5));
        let grads = scalar_grads(&store, 0.0);
        let mut st = AdamState::new(&store, AdamConfig::default());
        adam_step(&mut store, &grads, &mut st).unwrap();
        assert_eq!(store.get(store.ids().next().unwrap()).item(), 1.5);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        store.add("x", Tensor::scalar(0.0));
        let grads = scalar_grads(&store, 4.0);
        let mut st = AdamState::new(&store, AdamConfig { lr: 0.1, ..AdamConfig::default() });
        adam_step(&mut store, &grads, &mut st).unwrap();
        // m_hat = g, v_hat = g^2  =>  delta = -lr * g / (|g| + eps)
        let expected = -0.1 * 4.0 / (4.0 + 1e-9);
        assert!((store.get(store.ids().next().unwrap()).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let mut a = ParamStore::<f64>::new();
        a.add("x", Tensor::scalar(0.3));
        let mut b = a.clone();
        let grads = scalar_grads(&a, -2.0);
        let mut sa = AdamState::new(&a, AdamConfig::default());
        let mut sb = sa.clone();
        adam_step(&mut a, &grads, &mut sa).unwrap();
        adam_step(&mut b, &grads, &mut sb).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }
}
