//! Encoder-decoder transformer over deduped unit sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Scheme, TranslatorError};
use crate::emotion::Emotion;
use crate::nn::{
    AttentionLayout, Embedding, FeedForward, Graph, LayerNorm, Linear, MultiHeadAttention, NnError, ParamStore, Real,
    Segments, Tensor, Var,
};
use crate::units::UnitVocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslatorConfig {
    pub scheme: Scheme,
    /// Number of content units (K); special tokens are appended above it.
    pub vocab_size: u32,
    pub dim: usize,
    pub ffn: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Target emotions the model can produce.
    pub emotions: Vec<Emotion>,
    /// Beam width; 1 decodes greedily.
    pub beam: usize,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            scheme: Scheme::ShareEnc,
            vocab_size: 64,
            dim: 64,
            ffn: 128,
            layers: 2,
            heads: 2,
            dropout: 0.1,
            emotions: Emotion::ALL.to_vec(),
            beam: 1,
        }
    }
}

impl TranslatorConfig {
    pub fn vocab(&self) -> UnitVocab {
        UnitVocab::new(self.vocab_size)
    }

    pub fn validate(&self) -> Result<(), TranslatorError> {
        let bad = |m: String| Err(TranslatorError::Config(m));
        if self.vocab_size == 0 || self.dim == 0 || self.ffn == 0 || self.layers == 0 {
            return bad("vocab_size, dim, ffn and layers must be positive".into());
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} is not divisible by {} heads", self.dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.emotions.is_empty() {
            return bad("at least one target emotion is required".into());
        }
        let mut seen = self.emotions.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.emotions.len() {
            return bad("duplicate target emotion".into());
        }
        if self.beam == 0 {
            return bad("beam width must be at least 1".into());
        }
        Ok(())
    }

    pub fn encoder_count(&self) -> usize {
        match self.scheme {
            Scheme::ShareAll | Scheme::ShareEnc => 1,
            Scheme::ShareNone => self.emotions.len(),
        }
    }

    pub fn decoder_count(&self) -> usize {
        match self.scheme {
            Scheme::ShareAll => 1,
            Scheme::ShareEnc | Scheme::ShareNone => self.emotions.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderLayer {
    pub norm1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm3: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub norm: LayerNorm,
    pub output: Linear,
}

/// Layer handles; parameters live in the owning model's store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslatorNet {
    pub tokens: Embedding,
    pub encoders: Vec<Encoder>,
    pub decoders: Vec<Decoder>,
    pub dim: usize,
    pub dropout: f64,
}

/// Sinusoidal position code of `pos` in `dim` channels.
fn position_row(pos: usize, dim: usize, out: &mut Vec<f64>) {
    for i in 0..dim {
        let rate = 10_000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
        let a = pos as f64 * rate;
        out.push(if i % 2 == 0 { a.sin() } else { a.cos() });
    }
}

impl TranslatorNet {
    pub fn build<T: Real>(cfg: &TranslatorConfig, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Self {
        let total = cfg.vocab().total() as usize;
        let d = cfg.dim;
        let tokens = Embedding::new(store, "tok", total, d, rng);
        let encoders = (0..cfg.encoder_count())
            .map(|e| Encoder {
                layers: (0..cfg.layers)
                    .map(|l| {
                        let p = format!("enc{e}.l{l}");
                        EncoderLayer {
                            norm1: LayerNorm::new(store, &format!("{p}.ln1"), d),
                            attn: MultiHeadAttention::new(store, &format!("{p}.attn"), d, cfg.heads, rng),
                            norm2: LayerNorm::new(store, &format!("{p}.ln2"), d),
                            ffn: FeedForward::new(store, &format!("{p}.ffn"), d, cfg.ffn, cfg.dropout, rng),
                        }
                    })
                    .collect(),
                norm: LayerNorm::new(store, &format!("enc{e}.ln"), d),
            })
            .collect();
        let decoders = (0..cfg.decoder_count())
            .map(|k| {
                let layers = (0..cfg.layers)
                    .map(|l| {
                        let p = format!("dec{k}.l{l}");
                        DecoderLayer {
                            norm1: LayerNorm::new(store, &format!("{p}.ln1"), d),
                            self_attn: MultiHeadAttention::new(store, &format!("{p}.self"), d, cfg.heads, rng),
                            norm2: LayerNorm::new(store, &format!("{p}.ln2"), d),
                            cross_attn: MultiHeadAttention::new(store, &format!("{p}.cross"), d, cfg.heads, rng),
                            norm3: LayerNorm::new(store, &format!("{p}.ln3"), d),
                            ffn: FeedForward::new(store, &format!("{p}.ffn"), d, cfg.ffn, cfg.dropout, rng),
                        }
                    })
                    .collect();
                let norm = LayerNorm::new(store, &format!("dec{k}.ln"), d);
                let output = Linear::new(store, &format!("dec{k}.out"), d, total, rng);
                // start close to uniform predictions
                let shrink = T::from_f64_lossy(1.0 / (d as f64).sqrt());
                for w in store.get_mut(output.weight).data_mut() {
                    *w *= shrink;
                }
                Decoder { layers, norm, output }
            })
            .collect();
        TranslatorNet { tokens, encoders, decoders, dim: d, dropout: cfg.dropout }
    }

    fn embed<T: Real>(&self, g: &mut Graph<'_, T>, ids: &[u32], segments: &Segments) -> Result<Var, NnError> {
        let x = self.tokens.forward(g, ids)?;
        let mut pe = Vec::with_capacity(ids.len() * self.dim);
        for (_, len) in segments.iter() {
            for pos in 0..len {
                position_row(pos, self.dim, &mut pe);
            }
        }
        let pe = g.input(Tensor::from_f64(vec![ids.len(), self.dim], &pe)?)?;
        let x = g.add(x, pe)?;
        g.dropout(x, self.dropout)
    }

    fn residual<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, y: Var) -> Result<Var, NnError> {
        let y = g.dropout(y, self.dropout)?;
        g.add(x, y)
    }

    /// Encoder states for packed token sequences.
    pub fn encode<T: Real>(&self, g: &mut Graph<'_, T>, enc: usize, ids: &[u32], segments: &Segments) -> Result<Var, NnError> {
        let stack = &self.encoders[enc];
        let layout = AttentionLayout { queries: segments.clone(), keys: segments.clone(), causal: false, key_mask: None };
        let mut x = self.embed(g, ids, segments)?;
        for layer in &stack.layers {
            let h = layer.norm1.forward(g, x)?;
            let h = layer.attn.forward(g, h, h, &layout)?;
            x = self.residual(g, x, h)?;
            let h = layer.norm2.forward(g, x)?;
            let h = layer.ffn.forward(g, h)?;
            x = self.residual(g, x, h)?;
        }
        stack.norm.forward(g, x)
    }

    /// Next-token logits `[rows, vocab_total]` for packed decoder inputs.
    pub fn decode<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        dec: usize,
        ids: &[u32],
        segments: &Segments,
        memory: Var,
        memory_segments: &Segments,
    ) -> Result<Var, NnError> {
        let stack = &self.decoders[dec];
        let self_layout = AttentionLayout { queries: segments.clone(), keys: segments.clone(), causal: true, key_mask: None };
        let cross_layout =
            AttentionLayout { queries: segments.clone(), keys: memory_segments.clone(), causal: false, key_mask: None };
        let mut x = self.embed(g, ids, segments)?;
        for layer in &stack.layers {
            let h = layer.norm1.forward(g, x)?;
            let h = layer.self_attn.forward(g, h, h, &self_layout)?;
            x = self.residual(g, x, h)?;
            let h = layer.norm2.forward(g, x)?;
            let h = layer.cross_attn.forward(g, h, memory, &cross_layout)?;
            x = self.residual(g, x, h)?;
            let h = layer.norm3.forward(g, x)?;
            let h = layer.ffn.forward(g, h)?;
            x = self.residual(g, x, h)?;
        }
        let x = stack.norm.forward(g, x)?;
        stack.output.forward(g, x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranslatorModel {
    pub config: TranslatorConfig,
    pub net: TranslatorNet,
    pub params: ParamStore<f32>,
    pub trained: bool,
}

impl TranslatorModel {
    pub fn new(config: TranslatorConfig, seed: u64) -> Result<Self, TranslatorError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let net = TranslatorNet::build(&config, &mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(TranslatorModel { config, net, params, trained: false })
    }

    pub fn vocab(&self) -> UnitVocab {
        self.config.vocab()
    }

    /// Encoder and decoder stacks serving `target`; `None` selects the
    /// first stacks, which denoising pretraining uses.
    pub fn stacks(&self, target: Option<Emotion>) -> Result<(usize, usize), TranslatorError> {
        let Some(e) = target else { return Ok((0, 0)) };
        let k = self.config.emotions.iter().position(|&x| x == e).ok_or(TranslatorError::UnsupportedEmotion(e))?;
        Ok(match self.config.scheme {
            Scheme::ShareAll => (0, 0),
            Scheme::ShareEnc => (0, k),
            Scheme::ShareNone => (k, k),
        })
    }

    /// First decoder input token.
    pub fn start_token(&self, target: Option<Emotion>) -> u32 {
        match (self.config.scheme, target) {
            (Scheme::ShareAll, Some(e)) => self.vocab().emotion_token(e),
            _ => self.vocab().bos(),
        }
    }

    /// Encoder input: the content units followed by EOS.
    pub fn encoder_input(&self, src: &[u32]) -> Result<Vec<u32>, TranslatorError> {
        let v = self.vocab();
        let total = v.total();
        if let Some((position, &id)) = src.iter().enumerate().find(|(_, &u)| u >= total) {
            return Err(crate::units::UnitsError::OutOfVocab { position, id, size: total }.into());
        }
        let mut ids = src.to_vec();
        ids.push(v.eos());
        Ok(ids)
    }

    /// Copies the first encoder and decoder onto every other stack.
    pub fn broadcast_first_stacks(&mut self) {
        for e in 1..self.net.encoders.len() {
            self.params.copy_prefix("enc0.", &format!("enc{e}."));
        }
        for k in 1..self.net.decoders.len() {
            self.params.copy_prefix("dec0.", &format!("dec{k}."));
        }
    }
}
