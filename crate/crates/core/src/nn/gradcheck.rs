use serde::Serialize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Segments, Var};
use super::layers::{LayerInput, LayerSpec};
use super::params::ParamStore;
use super::tensor::Tensor;
use super::NnError;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic - fd| / max(|analytic|, |fd|, 1e-8)`.
    pub max_rel_error: f64,
    pub per_param: Vec<(String, f64)>,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(params: &ParamStore<f64>, loss_fn: &F) -> Result<f64, NnError>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, NnError>,
{
    let mut g = Graph::new(params);
    let l = loss_fn(&mut g)?;
    Ok(g.value(l).item())
}

/// Compares backward-pass gradients with fourth-order central finite
/// differences.
///
/// Each coordinate is tried at step `eps` and, unless that already agrees
/// to 1e-6, at `eps / 10`; the better estimate counts. A wide step loses to
/// ReLU kinks near the evaluation point and a narrow one to rounding, and
/// a wrong gradient fails at both.
///
/// `loss_fn` must build a deterministic scalar loss (dropout off). When
/// `max_coords` is set, at most that many evenly spaced entries of each
/// parameter tensor are perturbed.
pub fn grad_check<F>(
    params: &ParamStore<f64>,
    loss_fn: F,
    eps: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, NnError>,
{
    let grads = {
        let mut g = Graph::new(params);
        let l = loss_fn(&mut g)?;
        g.backward(l)?
    };
    let mut work = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, per_param: Vec::new(), coordinates: 0 };
    for (id, name, tensor) in params.iter() {
        let n = tensor.len();
        let picks: Vec<usize> = match max_coords {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for j in picks {
            let orig = tensor.data()[j];
            let analytic = grads.param(id).map_or(0.0, |g| g.data()[j]);
            let mut err = f64::INFINITY;
            for h in [eps, eps / 10.0] {
                let mut at = |k: f64| {
                    work.get_mut(id).data_mut()[j] = orig + k * h;
                    evaluate(&work, &loss_fn)
                };
                let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
                let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
                err = err.min(relative_error(analytic, numeric));
                if err < 1e-6 {
                    break;
                }
            }
            work.get_mut(id).data_mut()[j] = orig;
            worst = worst.max(err);
            report.coordinates += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.push((name.to_string(), worst));
    }
    Ok(report)
}

/// One small instance of every layer kind.
pub fn layer_catalog() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Embedding { vocab: 7, dim: 4 },
        LayerSpec::Linear { in_dim: 4, out_dim: 3 },
        LayerSpec::Conv1d { kernel: 3, in_channels: 4, channels: 3 },
        LayerSpec::LayerNorm { dim: 4 },
        LayerSpec::MultiHeadAttention { dim: 4, heads: 2 },
        LayerSpec::FeedForward { dim: 4, hidden: 6 },
        LayerSpec::Dropout { p: 0.1 },
        LayerSpec::Sigmoid,
        LayerSpec::Relu,
        LayerSpec::Softmax,
    ]
}

/// Grad-checks a single layer on two packed sequences (lengths 3 and 4).
///
/// The input matrix is registered as a parameter so that parameter-free
/// layers are checked with respect to their input. The loss is a fixed
/// random weighting of the layer output.
pub fn check_layer(spec: &LayerSpec, seed: u64, eps: f64) -> Result<GradCheckReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let layer = spec.build(&mut store, "layer", &mut rng);
    let segments = Segments::from_lengths([3, 4]);
    let rows = segments.total();
    let (ids, input, out_dim) = match spec {
        LayerSpec::Embedding { vocab, dim } => {
            let ids: Vec<u32> = (0..rows).map(|_| rng.random_range(0..*vocab as u32)).collect();
            (ids, None, *dim)
        }
        _ => {
            let width = match spec {
                LayerSpec::Linear { in_dim, .. } => *in_dim,
                LayerSpec::Conv1d { in_channels, .. } => *in_channels,
                _ => 4,
            };
            let data = (0..rows * width).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = store.add("input", Tensor::new(vec![rows, width], data)?);
            (Vec::new(), Some(x), spec.output_dim(Some(width))?)
        }
    };
    let weights: Vec<f64> = (0..rows * out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    grad_check(
        &store,
        |g| {
            let y = match input {
                Some(x) => {
                    let xv = g.param(x);
                    layer.forward(g, LayerInput::Features(xv), &segments)?
                }
                None => layer.forward(g, LayerInput::Ids(&ids), &segments)?,
            };
            let w = g.mul_const(y, weights.clone())?;
            g.sum(w)
        },
        eps,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_kind_passes() {
        for spec in layer_catalog() {
            let r = check_layer(&spec, 7, 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4, "{}: {:?}", spec.kind(), r);
        }
    }

    #[test]
    fn cross_entropy_composite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let data = (0..15).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = store.add("logits", Tensor::new(vec![3, 5], data).unwrap());
        let r = grad_check(
            &store,
            |g| {
                let v = g.param(x);
                let s = g.softmax(v)?;
                let l = g.cross_entropy(v, &[0, 4, 2])?;
                let t = g.sum(s)?;
                g.add(l, t)
            },
            1e-5,
            None,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn bce_and_mse_losses() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::new(vec![2, 3], vec![0.3, -1.2, 2.0, 0.0, 0.7, -0.4]).unwrap());
        let r = grad_check(
            &store,
            |g| {
                let v = g.param(x);
                let a = g.bce_with_logits(v, vec![1.0, 0.0, 0.6, 0.2, 1.0, 0.0])?;
                let b = g.mse(v, vec![0.5; 6])?;
                g.add(a, b)
            },
            1e-5,
            None,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn bce_of_half_against_one_is_ln2() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let z = g.input(Tensor::zeros(vec![1, 1])).unwrap();
        let l = g.bce_with_logits(z, vec![1.0]).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::scalar(3.0));
        let r = grad_check(
            &store,
            |g| {
                let v = g.param(x);
                let s = g.square(v)?;
                g.sum(s)
            },
            1e-4,
            None,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
