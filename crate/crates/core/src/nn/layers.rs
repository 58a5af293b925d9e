use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{AttentionLayout, Graph, Segments, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Real;
use super::NnError;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), vec![in_dim, out_dim], in_dim, rng);
        let bias = Some(store.add_uniform(format!("{name}.bias"), vec![out_dim], in_dim, rng));
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn without_bias<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), vec![in_dim, out_dim], in_dim, rng);
        Linear { weight, bias: None, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, vocab: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let table = store.add_uniform(format!("{name}.table"), vec![vocab, dim], 1, rng);
        Embedding { table, vocab, dim }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, ids: &[u32]) -> Result<Var, NnError> {
        let t = g.param(self.table);
        g.embedding(t, ids)
    }
}

/// 1-D convolution over time with "same" padding inside each segment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        let fan_in = kernel * in_channels;
        let weight = store.add_uniform(format!("{name}.weight"), vec![fan_in, out_channels], fan_in, rng);
        let bias = store.add_uniform(format!("{name}.bias"), vec![out_channels], fan_in, rng);
        Conv1d { weight, bias, kernel, in_channels, out_channels }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, segments: &Segments) -> Result<Var, NnError> {
        let cols = g.im2col(x, self.kernel, segments)?;
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(cols, w)?;
        g.add_bias(y, b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gain = store.add_const(format!("{name}.gain"), vec![dim], 1.0);
        let bias = store.add_const(format!("{name}.bias"), vec![dim], 0.0);
        LayerNorm { gain, bias, dim }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            // a key bias shifts every score of a query equally, so it has no effect
            key: Linear::without_bias(store, &format!("{name}.k"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        queries: Var,
        memory: Var,
        layout: &AttentionLayout,
    ) -> Result<Var, NnError> {
        let q = self.query.forward(g, queries)?;
        let k = self.key.forward(g, memory)?;
        let v = self.value.forward(g, memory)?;
        let a = g.attention(q, k, v, self.heads, layout)?;
        self.output.forward(g, a)
    }
}

/// Position-wise `linear -> relu -> dropout -> linear`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
    pub dropout: f64,
}

impl FeedForward {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.fc1"), dim, hidden, rng),
            outer: Linear::new(store, &format!("{name}.fc2"), hidden, dim, rng),
            dropout,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NnError> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h)?;
        let h = g.dropout(h, self.dropout)?;
        self.outer.forward(g, h)
    }
}

/// Declarative layer description; `build` allocates its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Embedding { vocab: usize, dim: usize },
    Linear { in_dim: usize, out_dim: usize },
    Conv1d { kernel: usize, in_channels: usize, channels: usize },
    LayerNorm { dim: usize },
    MultiHeadAttention { dim: usize, heads: usize },
    FeedForward { dim: usize, hidden: usize },
    Dropout { p: f64 },
    Sigmoid,
    Relu,
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Embedding { .. } => "embedding",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::LayerNorm { .. } => "layer_norm",
            LayerSpec::MultiHeadAttention { .. } => "multi_head_attention",
            LayerSpec::FeedForward { .. } => "feed_forward",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Relu => "relu",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Width of the output given the input width (`None` for id inputs).
    pub fn output_dim(&self, input: Option<usize>) -> Result<usize, NnError> {
        let need = |want: usize| -> Result<(), NnError> {
            match input {
                Some(d) if d == want => Ok(()),
                other => Err(NnError::Shape(format!("{} expects width {want}, got {other:?}", self.kind()))),
            }
        };
        match *self {
            LayerSpec::Embedding { dim, .. } => match input {
                None => Ok(dim),
                Some(_) => Err(NnError::Shape("embedding must be the first layer".into())),
            },
            LayerSpec::Linear { in_dim, out_dim } => need(in_dim).map(|_| out_dim),
            LayerSpec::Conv1d { in_channels, channels, .. } => need(in_channels).map(|_| channels),
            LayerSpec::LayerNorm { dim } | LayerSpec::MultiHeadAttention { dim, .. } | LayerSpec::FeedForward { dim, .. } => {
                need(dim).map(|_| dim)
            }
            LayerSpec::Dropout { .. } | LayerSpec::Sigmoid | LayerSpec::Relu | LayerSpec::Softmax => {
                input.ok_or_else(|| NnError::Shape(format!("{} cannot take ids", self.kind())))
            }
        }
    }

    pub fn build<T: Real>(&self, store: &mut ParamStore<T>, name: &str, rng: &mut ChaCha8Rng) -> Layer {
        match *self {
            LayerSpec::Embedding { vocab, dim } => Layer::Embedding(Embedding::new(store, name, vocab, dim, rng)),
            LayerSpec::Linear { in_dim, out_dim } => Layer::Linear(Linear::new(store, name, in_dim, out_dim, rng)),
            LayerSpec::Conv1d { kernel, in_channels, channels } => {
                Layer::Conv1d(Conv1d::new(store, name, in_channels, channels, kernel, rng))
            }
            LayerSpec::LayerNorm { dim } => Layer::LayerNorm(LayerNorm::new(store, name, dim)),
            LayerSpec::MultiHeadAttention { dim, heads } => {
                Layer::Attention(MultiHeadAttention::new(store, name, dim, heads, rng))
            }
            LayerSpec::FeedForward { dim, hidden } => {
                Layer::FeedForward(FeedForward::new(store, name, dim, hidden, 0.0, rng))
            }
            LayerSpec::Dropout { p } => Layer::Dropout(p),
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Softmax => Layer::Softmax,
        }
    }
}

/// Input to a layer stack: token ids or a packed feature matrix.
pub enum LayerInput<'a> {
    Ids(&'a [u32]),
    Features(Var),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Embedding(Embedding),
    Linear(Linear),
    Conv1d(Conv1d),
    LayerNorm(LayerNorm),
    Attention(MultiHeadAttention),
    FeedForward(FeedForward),
    Dropout(f64),
    Sigmoid,
    Relu,
    Softmax,
}

impl Layer {
    /// Applies the layer; attention is unmasked self-attention per segment.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, input: LayerInput<'_>, segments: &Segments) -> Result<Var, NnError> {
        let x = match (self, input) {
            (Layer::Embedding(e), LayerInput::Ids(ids)) => return e.forward(g, ids),
            (_, LayerInput::Ids(_)) => return Err(NnError::Shape("only embeddings take ids".into())),
            (Layer::Embedding(_), LayerInput::Features(_)) => {
                return Err(NnError::Shape("embedding needs ids".into()))
            }
            (_, LayerInput::Features(x)) => x,
        };
        match self {
            Layer::Embedding(_) => unreachable!(),
            Layer::Linear(l) => l.forward(g, x),
            Layer::Conv1d(c) => c.forward(g, x, segments),
            Layer::LayerNorm(n) => n.forward(g, x),
            Layer::Attention(a) => {
                let layout = AttentionLayout {
                    queries: segments.clone(),
                    keys: segments.clone(),
                    causal: false,
                    key_mask: None,
                };
                a.forward(g, x, x, &layout)
            }
            Layer::FeedForward(f) => f.forward(g, x),
            Layer::Dropout(p) => g.dropout(x, *p),
            Layer::Sigmoid => g.sigmoid(x),
            Layer::Relu => g.relu(x),
            Layer::Softmax => g.softmax(x),
        }
    }
}

/// A validated chain of layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
    pub output_dim: usize,
}

impl Sequential {
    pub fn build<T: Real>(
        specs: &[LayerSpec],
        input_dim: Option<usize>,
        store: &mut ParamStore<T>,
        name: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let mut dim = input_dim;
        let mut layers = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            dim = Some(spec.output_dim(dim)?);
            layers.push(spec.build(store, &format!("{name}.{i}"), rng));
        }
        let output_dim = dim.ok_or_else(|| NnError::Shape("empty layer stack".into()))?;
        Ok(Sequential { layers, output_dim })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, input: LayerInput<'_>, segments: &Segments) -> Result<Var, NnError> {
        let mut layers = self.layers.iter();
        let first = layers.next().ok_or_else(|| NnError::Shape("empty layer stack".into()))?;
        let mut x = first.forward(g, input, segments)?;
        for layer in layers {
            x = layer.forward(g, LayerInput::Features(x), segments)?;
        }
        Ok(x)
    }
}
