//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! Several variable-length sequences are packed row-wise into one matrix; a
//! [`Segments`] list records where each sequence starts. Row-wise ops
//! (linear layers, layer norm, activations) ignore segment boundaries, while
//! attention and convolution respect them.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, MatMut, MatRef, Real, Tensor};
use super::NnError;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Packed row ranges `(start, len)` of the sequences in a batch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Segments(Vec<(usize, usize)>);

impl Segments {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut start = 0;
        let mut v = Vec::new();
        for len in lengths {
            v.push((start, len));
            start += len;
        }
        Segments(v)
    }

    pub fn single(len: usize) -> Self {
        Segments(vec![(0, len)])
    }

    pub fn total(&self) -> usize {
        self.0.last().map_or(0, |&(s, l)| s + l)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().copied()
    }

    pub fn get(&self, i: usize) -> (usize, usize) {
        self.0[i]
    }
}

/// How queries attend to keys within a packed batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionLayout {
    pub queries: Segments,
    pub keys: Segments,
    /// Query `i` may only see keys `j <= i` of its segment.
    pub causal: bool,
    /// Key rows excluded from attention (padding).
    pub key_mask: Option<Vec<bool>>,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Scale { x: Var, c: T },
    MulConst { x: Var, mask: Vec<T> },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    Embedding { table: Var, ids: Vec<u32> },
    Im2col { x: Var, kernel: usize, segments: Segments },
    ConcatCols(Vec<Var>),
    Attention { q: Var, k: Var, v: Var, heads: usize, layout: Box<AttentionLayout>, probs: Vec<T> },
    Sum(Var),
    Mean(Var),
    Square(Var),
    CrossEntropy { logits: Var, targets: Vec<u32>, probs: Vec<T> },
    BceLogits { x: Var, targets: Vec<T> },
    Mse { x: Var, target: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias { .. } => "add_bias",
            Op::Scale { .. } => "scale",
            Op::MulConst { .. } => "mul_const",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding",
            Op::Im2col { .. } => "im2col",
            Op::ConcatCols(_) => "concat_cols",
            Op::Attention { .. } => "attention",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Square(_) => "square",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::BceLogits { .. } => "bce_logits",
            Op::Mse { .. } => "mse",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddBias { x, bias } => vec![*x, *bias],
            Op::Scale { x, .. } | Op::MulConst { x, .. } => vec![*x],
            Op::Relu(x) | Op::Sigmoid(x) | Op::Softmax(x) => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Embedding { table, .. } => vec![*table],
            Op::Im2col { x, .. } => vec![*x],
            Op::ConcatCols(parts) => parts.clone(),
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Sum(x) | Op::Mean(x) | Op::Square(x) => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::BceLogits { x, .. } | Op::Mse { x, .. } => vec![*x],
        }
    }
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
    inputs: HashMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&v)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Adds `other` into `self` (same parameter store).
    pub fn accumulate(&mut self, other: Gradients<T>) {
        for (dst, src) in self.params.iter_mut().zip(other.params) {
            match (dst.as_mut(), src) {
                (Some(d), Some(s)) => d.add_assign(&s),
                (None, Some(s)) => *dst = Some(s),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        let c = T::from_f64_lossy(c);
        for g in self.params.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.params.iter().flatten().map(|g| g.sum_sq()).sum::<f64>().sqrt()
    }
}

/// Computation tape bound to a parameter store.
pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    train: bool,
    rng: ChaCha8Rng,
}

fn shape_err(msg: String) -> NnError {
    NnError::Shape(msg)
}

impl<'p, T: Real> Graph<'p, T> {
    /// Inference-mode graph: dropout disabled.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode graph; `dropout_seed` drives every dropout mask.
    pub fn training(params: &'p ParamStore<T>, dropout_seed: u64) -> Self {
        let mut g = Self::new(params);
        g.train = true;
        g.rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        g
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(t)) => t,
            _ => unreachable!("non-param node without value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var, NnError> {
        if !value.is_finite() {
            return Err(NnError::NonFinite(op.name()));
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value: Some(value), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var, NnError> {
        self.push(t, Op::Leaf)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Result<Var, NnError> {
        let v = self.push(t, Op::Leaf)?;
        self.nodes[v.0].requires_grad = true;
        Ok(v)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn dims(&self, v: Var) -> Result<(usize, usize), NnError> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(shape_err(format!("matmul [{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            T::one(),
            MatRef::block(self.value(a).data(), 0, m, k, k),
            MatRef::block(self.value(b).data(), 0, k, n, n),
            T::zero(),
            MatMut::block(&mut out, 0, m, n, n),
        );
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, trans_b: false })
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.dims(a)?;
        let (n, k2) = self.dims(b)?;
        if k != k2 {
            return Err(shape_err(format!("matmul_nt [{m},{k}] x [{n},{k2}]^T")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            T::one(),
            MatRef::block(self.value(a).data(), 0, m, k, k),
            MatRef::block(self.value(b).data(), 0, n, k, k).t(),
            T::zero(),
            MatMut::block(&mut out, 0, m, n, n),
        );
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, trans_b: true })
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var, NnError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(format!("{}: {:?} vs {:?}", op.name(), ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NnError> {
        let (r, c) = self.dims(x)?;
        let b = self.value(bias);
        if b.len() != c {
            return Err(shape_err(format!("add_bias: {c} columns, bias of {}", b.len())));
        }
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c.max(1)).take(r) {
            for (v, &bb) in row.iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
        let t = Tensor::new(vec![r, c], data)?;
        self.push(t, Op::AddBias { x, bias })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, NnError> {
        let c = T::from_f64_lossy(c);
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * c).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        self.push(t, Op::Scale { x, c })
    }

    /// Elementwise product with a constant tensor of the same size.
    pub fn mul_const(&mut self, x: Var, mask: Vec<T>) -> Result<Var, NnError> {
        let t = self.value(x);
        if t.len() != mask.len() {
            return Err(shape_err(format!("mul_const: {} vs {}", t.len(), mask.len())));
        }
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        self.push(t, Op::MulConst { x, mask })
    }

    /// Inverted dropout; identity outside training mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, NnError> {
        if !self.train || p <= 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask = (0..n).map(|_| if self.rng.random::<f64>() < p { T::zero() } else { keep }).collect();
        self.mul_const(x, mask)
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var, NnError> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        self.push(t, op)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        self.map(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NnError> {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var, NnError> {
        self.map(x, |v| v * v, Op::Square(x))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NnError> {
        let (r, c) = self.dims(x)?;
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c.max(1)).take(r) {
            softmax_in_place(row);
        }
        let t = Tensor::new(vec![r, c], data)?;
        self.push(t, Op::Softmax(x))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NnError> {
        let (r, c) = self.dims(x)?;
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(shape_err(format!("layer_norm over {c} columns")));
        }
        let eps = T::from_f64_lossy(eps);
        let n = T::from_usize(c).unwrap();
        let xs = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(vec![r, c], out)?;
        self.push(t, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    /// Gathers rows of `table` (a parameter or input) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var, NnError> {
        let (v, d) = self.dims(table)?;
        let tab = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            if id >= v {
                return Err(shape_err(format!("embedding id {id} >= table rows {v}")));
            }
            out.extend_from_slice(&tab[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        self.push(t, Op::Embedding { table, ids: ids.to_vec() })
    }

    /// Unfolds `kernel` neighbouring rows (same padding, zero outside each
    /// segment) into columns: output `[T, kernel * C]`.
    pub fn im2col(&mut self, x: Var, kernel: usize, segments: &Segments) -> Result<Var, NnError> {
        let (t, c) = self.dims(x)?;
        if kernel % 2 == 0 {
            return Err(shape_err(format!("conv kernel {kernel} must be odd")));
        }
        if segments.total() != t {
            return Err(shape_err(format!("segments cover {} rows, input has {t}", segments.total())));
        }
        let half = kernel / 2;
        let xs = self.value(x).data();
        let width = kernel * c;
        let mut out = vec![T::zero(); t * width];
        for (start, len) in segments.iter() {
            for r in 0..len {
                for j in 0..kernel {
                    let src = r as isize + j as isize - half as isize;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let src_row = start + src as usize;
                    let dst = (start + r) * width + j * c;
                    out[dst..dst + c].copy_from_slice(&xs[src_row * c..(src_row + 1) * c]);
                }
            }
        }
        let tt = Tensor::new(vec![t, width], out)?;
        self.push(tt, Op::Im2col { x, kernel, segments: segments.clone() })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = self.dims(parts[0])?.0;
        let mut widths = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != rows {
                return Err(shape_err(format!("concat_cols: {r} rows vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![rows, total], out)?;
        self.push(t, Op::ConcatCols(parts.to_vec()))
    }

    /// Scaled dot-product attention over packed segments, all heads at once.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: &AttentionLayout,
    ) -> Result<Var, NnError> {
        let (nq, d) = self.dims(q)?;
        let (nk, dk) = self.dims(k)?;
        let (nv, dv) = self.dims(v)?;
        if dk != d || dv != d || nv != nk || heads == 0 || d % heads != 0 {
            return Err(shape_err(format!("attention q[{nq},{d}] k[{nk},{dk}] v[{nv},{dv}] heads {heads}")));
        }
        if layout.queries.len() != layout.keys.len()
            || layout.queries.total() != nq
            || layout.keys.total() != nk
            || layout.key_mask.as_ref().is_some_and(|m| m.len() != nk)
        {
            return Err(shape_err("attention layout does not match inputs".into()));
        }
        let dh = d / heads;
        let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let prob_len: usize = layout
            .queries
            .iter()
            .zip(layout.keys.iter())
            .map(|((_, lq), (_, lk))| lq * lk * heads)
            .sum();
        let mut probs = vec![T::zero(); prob_len];
        let mut out = vec![T::zero(); nq * d];
        let mut off = 0;
        for ((qs, lq), (ks, lk)) in layout.queries.iter().zip(layout.keys.iter()) {
            for h in 0..heads {
                let p = &mut probs[off..off + lq * lk];
                gemm(
                    scale,
                    MatRef::block(qd, qs * d + h * dh, lq, dh, d),
                    MatRef::block(kd, ks * d + h * dh, lk, dh, d).t(),
                    T::zero(),
                    MatMut::block(p, 0, lq, lk, lk),
                );
                for i in 0..lq {
                    let row = &mut p[i * lk..(i + 1) * lk];
                    for (j, s) in row.iter_mut().enumerate() {
                        let masked = (layout.causal && j > i)
                            || layout.key_mask.as_ref().is_some_and(|m| m[ks + j]);
                        if masked {
                            *s = T::neg_infinity();
                        }
                    }
                    softmax_in_place(row);
                }
                gemm(
                    T::one(),
                    MatRef::block(p, 0, lq, lk, lk),
                    MatRef::block(vd, ks * d + h * dh, lk, dh, d),
                    T::zero(),
                    MatMut::block(&mut out, qs * d + h * dh, lq, dh, d),
                );
                off += lq * lk;
            }
        }
        let t = Tensor::new(vec![nq, d], out)?;
        self.push(t, Op::Attention { q, k, v, heads, layout: Box::new(layout.clone()), probs })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NnError> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err("mean of empty tensor".into()));
        }
        let s = t.data().iter().copied().sum::<T>() / T::from_usize(t.len()).unwrap();
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean over rows of token cross-entropy against integer targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32]) -> Result<Var, NnError> {
        let (n, v) = self.dims(logits)?;
        if n != targets.len() || n == 0 {
            return Err(shape_err(format!("cross_entropy: {n} rows, {} targets", targets.len())));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0f64;
        for (i, &t) in targets.iter().enumerate() {
            let t = t as usize;
            if t >= v {
                return Err(shape_err(format!("target {t} >= classes {v}")));
            }
            let row = &mut probs[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            total += (lse - row[t]).as_f64();
            for z in row.iter_mut() {
                *z = (*z - lse).exp();
            }
        }
        let loss = T::from_f64_lossy(total / n as f64);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    /// Binary cross-entropy of `sigmoid(x)` against soft targets, summed over
    /// columns and averaged over rows.
    pub fn bce_with_logits(&mut self, x: Var, targets: Vec<T>) -> Result<Var, NnError> {
        let (n, _) = self.dims(x)?;
        let xs = self.value(x).data();
        if xs.len() != targets.len() || n == 0 {
            return Err(shape_err(format!("bce: {} logits, {} targets", xs.len(), targets.len())));
        }
        let total: f64 = xs
            .iter()
            .zip(&targets)
            .map(|(&z, &t)| {
                let z = z.as_f64();
                z.max(0.0) - z * t.as_f64() + (-z.abs()).exp().ln_1p()
            })
            .sum();
        let loss = T::from_f64_lossy(total / n as f64);
        self.push(Tensor::scalar(loss), Op::BceLogits { x, targets })
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: Vec<T>) -> Result<Var, NnError> {
        let xs = self.value(x).data();
        if xs.len() != target.len() || xs.is_empty() {
            return Err(shape_err(format!("mse: {} values, {} targets", xs.len(), target.len())));
        }
        let total: f64 = xs.iter().zip(&target).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum();
        let loss = T::from_f64_lossy(total / xs.len() as f64);
        self.push(Tensor::scalar(loss), Op::Mse { x, target })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NnError> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape().to_vec(), T::one()));
        let mut out = Gradients { params: vec![None; self.params.len()], inputs: HashMap::new() };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if !g.is_finite() {
                return Err(NnError::NonFinite("gradient"));
            }
            self.propagate(i, &g, &mut grads)?;
            match node.op {
                Op::Param(id) => out.params[id.0] = Some(g),
                Op::Leaf => {
                    out.inputs.insert(Var(i), g);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut Tensor<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape().to_vec()));
        }
        slot.as_mut()
    }

    fn acc_with(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl Fn(usize) -> T) {
        if let Some(d) = self.acc(grads, v) {
            for (j, x) in d.data_mut().iter_mut().enumerate() {
                *x += f(j);
            }
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<(), NnError> {
        let gd = g.data();
        let out = self.nodes[i].value.as_ref();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.dims(*a)?;
                let n = g.cols();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.acc(grads, *a) {
                    // dA = dC * B^T  (or dC * B when b is transposed)
                    let bview = if *trans_b {
                        MatRef::block(bd, 0, n, k, k)
                    } else {
                        MatRef::block(bd, 0, k, n, n).t()
                    };
                    gemm(T::one(), MatRef::block(gd, 0, m, n, n), bview, T::one(), MatMut::block(da.data_mut(), 0, m, k, k));
                }
                if let Some(db) = self.acc(grads, *b) {
                    if *trans_b {
                        // dB = dC^T * A
                        gemm(
                            T::one(),
                            MatRef::block(gd, 0, m, n, n).t(),
                            MatRef::block(ad, 0, m, k, k),
                            T::one(),
                            MatMut::block(db.data_mut(), 0, n, k, k),
                        );
                    } else {
                        // dB = A^T * dC
                        gemm(
                            T::one(),
                            MatRef::block(ad, 0, m, k, k).t(),
                            MatRef::block(gd, 0, m, n, n),
                            T::one(),
                            MatMut::block(db.data_mut(), 0, k, n, n),
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc_with(grads, *a, |j| gd[j]);
                self.acc_with(grads, *b, |j| gd[j]);
            }
            Op::Sub(a, b) => {
                self.acc_with(grads, *a, |j| gd[j]);
                self.acc_with(grads, *b, |j| -gd[j]);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.acc_with(grads, *a, |j| gd[j] * bd[j]);
                self.acc_with(grads, *b, |j| gd[j] * ad[j]);
            }
            Op::AddBias { x, bias } => {
                self.acc_with(grads, *x, |j| gd[j]);
                let c = g.cols();
                if let Some(db) = self.acc(grads, *bias) {
                    for row in gd.chunks(c.max(1)) {
                        for (d, &v) in db.data_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
            }
            Op::Scale { x, c } => self.acc_with(grads, *x, |j| gd[j] * *c),
            Op::MulConst { x, mask } => self.acc_with(grads, *x, |j| gd[j] * mask[j]),
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                self.acc_with(grads, *x, |j| if xd[j] > T::zero() { gd[j] } else { T::zero() });
            }
            Op::Sigmoid(x) => {
                let y = out.unwrap().data();
                self.acc_with(grads, *x, |j| gd[j] * y[j] * (T::one() - y[j]));
            }
            Op::Square(x) => {
                let xd = self.value(*x).data();
                let two = T::from_f64_lossy(2.0);
                self.acc_with(grads, *x, |j| gd[j] * two * xd[j]);
            }
            Op::Softmax(x) => {
                let y = out.unwrap();
                let c = y.cols();
                let yd = y.data();
                let mut dx = vec![T::zero(); yd.len()];
                for r in 0..y.rows() {
                    let s: T = (0..c).map(|j| gd[r * c + j] * yd[r * c + j]).sum();
                    for j in 0..c {
                        dx[r * c + j] = yd[r * c + j] * (gd[r * c + j] - s);
                    }
                }
                self.acc_with(grads, *x, |j| dx[j]);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (r, c) = g.dims2()?;
                let gv = self.value(*gain).data();
                if let Some(dg) = self.acc(grads, *gain) {
                    let dgd = dg.data_mut();
                    for (j, d) in dgd.iter_mut().enumerate() {
                        *d += (0..r).map(|i| gd[i * c + j] * xhat[i * c + j]).sum::<T>();
                    }
                }
                if let Some(db) = self.acc(grads, *bias) {
                    let dbd = db.data_mut();
                    for (j, d) in dbd.iter_mut().enumerate() {
                        *d += (0..r).map(|i| gd[i * c + j]).sum::<T>();
                    }
                }
                if let Some(dx) = self.acc(grads, *x) {
                    let n = T::from_usize(c).unwrap();
                    let dxd = dx.data_mut();
                    for i in 0..r {
                        let dh: Vec<T> = (0..c).map(|j| gd[i * c + j] * gv[j]).collect();
                        let s1: T = dh.iter().copied().sum();
                        let s2: T = (0..c).map(|j| dh[j] * xhat[i * c + j]).sum();
                        for j in 0..c {
                            dxd[i * c + j] += inv_std[i] / n * (n * dh[j] - s1 - xhat[i * c + j] * s2);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = g.cols();
                if let Some(dt) = self.acc(grads, *table) {
                    let dtd = dt.data_mut();
                    for (r, &id) in ids.iter().enumerate() {
                        let id = id as usize;
                        for j in 0..d {
                            dtd[id * d + j] += gd[r * d + j];
                        }
                    }
                }
            }
            Op::Im2col { x, kernel, segments } => {
                let c = self.dims(*x)?.1;
                let half = kernel / 2;
                let width = kernel * c;
                if let Some(dx) = self.acc(grads, *x) {
                    let dxd = dx.data_mut();
                    for (start, len) in segments.iter() {
                        for r in 0..len {
                            for j in 0..*kernel {
                                let src = r as isize + j as isize - half as isize;
                                if src < 0 || src >= len as isize {
                                    continue;
                                }
                                let src_row = start + src as usize;
                                let o = (start + r) * width + j * c;
                                for ch in 0..c {
                                    dxd[src_row * c + ch] += gd[o + ch];
                                }
                            }
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut col = 0;
                for &p in parts {
                    let w = self.dims(p)?.1;
                    let base = col;
                    self.acc_with(grads, p, |j| {
                        let (r, cc) = (j / w, j % w);
                        gd[r * total + base + cc]
                    });
                    col += w;
                }
            }
            Op::Attention { q, k, v, heads, layout, probs } => {
                let (_, d) = self.dims(*q)?;
                let dh = d / heads;
                let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![T::zero(); qd.len()];
                let mut dk = vec![T::zero(); kd.len()];
                let mut dv = vec![T::zero(); vd.len()];
                let mut off = 0;
                for ((qs, lq), (ks, lk)) in layout.queries.iter().zip(layout.keys.iter()) {
                    for h in 0..*heads {
                        let p = &probs[off..off + lq * lk];
                        let pv = MatRef::block(p, 0, lq, lk, lk);
                        let go = MatRef::block(gd, qs * d + h * dh, lq, dh, d);
                        // dV = P^T dO
                        gemm(T::one(), pv.t(), go, T::one(), MatMut::block(&mut dv, ks * d + h * dh, lk, dh, d));
                        // dP = dO V^T
                        let mut ds = vec![T::zero(); lq * lk];
                        gemm(
                            T::one(),
                            go,
                            MatRef::block(vd, ks * d + h * dh, lk, dh, d).t(),
                            T::zero(),
                            MatMut::block(&mut ds, 0, lq, lk, lk),
                        );
                        for i in 0..lq {
                            let row = &mut ds[i * lk..(i + 1) * lk];
                            let prow = &p[i * lk..(i + 1) * lk];
                            let s: T = row.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                            for (x, &pp) in row.iter_mut().zip(prow) {
                                *x = pp * (*x - s);
                            }
                        }
                        let dsv = MatRef::block(&ds, 0, lq, lk, lk);
                        gemm(
                            scale,
                            dsv,
                            MatRef::block(kd, ks * d + h * dh, lk, dh, d),
                            T::one(),
                            MatMut::block(&mut dq, qs * d + h * dh, lq, dh, d),
                        );
                        gemm(
                            scale,
                            dsv.t(),
                            MatRef::block(qd, qs * d + h * dh, lq, dh, d),
                            T::one(),
                            MatMut::block(&mut dk, ks * d + h * dh, lk, dh, d),
                        );
                        off += lq * lk;
                    }
                }
                self.acc_with(grads, *q, |j| dq[j]);
                self.acc_with(grads, *k, |j| dk[j]);
                self.acc_with(grads, *v, |j| dv[j]);
            }
            Op::Sum(x) => {
                let s = gd[0];
                self.acc_with(grads, *x, |_| s);
            }
            Op::Mean(x) => {
                let s = gd[0] / T::from_usize(self.value(*x).len()).unwrap();
                self.acc_with(grads, *x, |_| s);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = self.dims(*logits)?.1;
                let s = gd[0] / T::from_usize(targets.len()).unwrap();
                self.acc_with(grads, *logits, |j| {
                    let (r, c) = (j / v, j % v);
                    let onehot = if targets[r] as usize == c { T::one() } else { T::zero() };
                    (probs[j] - onehot) * s
                });
            }
            Op::BceLogits { x, targets } => {
                let xd = self.value(*x).data();
                let s = gd[0] / T::from_usize(self.dims(*x)?.0).unwrap();
                self.acc_with(grads, *x, |j| (sigmoid(xd[j]) - targets[j]) * s);
            }
            Op::Mse { x, target } => {
                let xd = self.value(*x).data();
                let s = gd[0] * T::from_f64_lossy(2.0 / xd.len() as f64);
                self.acc_with(grads, *x, |j| (xd[j] - target[j]) * s);
            }
        }
        Ok(())
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Softmax of one row; rows that are entirely `-inf` become zeros.
pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}
