use adamatte_tensor::{ParamId, ParamStore, Scalar, Tensor};
use rand_chacha::ChaCha8Rng;

use super::attention::{fuse, long_term_attention, short_term_attention, windowed_attention};
use super::embed::embed_fgbg;
use super::memory::{KeyValue, MemoryBank};
use crate::config::{AttentionMode, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{uniform, LayerNorm, Linear};

#[derive(Debug, Clone)]
pub struct Qkv<T: Scalar = f32> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
}

/// Projection matrices (`C×C`) and biases (`C`).
#[derive(Debug, Clone, Copy)]
pub struct QkvWeights<'a, T: Scalar> {
    pub wq: &'a Tensor<T>,
    pub bq: &'a Tensor<T>,
    pub wk: &'a Tensor<T>,
    pub bk: &'a Tensor<T>,
    pub wv: &'a Tensor<T>,
    pub bv: &'a Tensor<T>,
}

/// Applies the three projections to a `P×C` token matrix.
pub fn project_qkv<T: Scalar>(tokens: &Tensor<T>, w: &QkvWeights<'_, T>) -> Result<Qkv<T>> {
    if tokens.ndim() != 2 || tokens.shape()[1] != w.wq.shape()[0] {
        return Err(Error::Dimension(format!(
            "tokens {:?} do not match projection {:?}",
            tokens.shape(),
            w.wq.shape()
        )));
    }
    Ok(Qkv {
        q: tokens.matmul(w.wq)?.add_row(w.bq)?,
        k: tokens.matmul(w.wk)?.add_row(w.bk)?,
        v: tokens.matmul(w.wv)?.add_row(w.bv)?,
    })
}

#[derive(Debug, Clone)]
pub struct TransformerLayer {
    index: usize,
    heads: usize,
    ln_attn: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    ln_mlp: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// Memory and switches consulted by the attention block.
#[derive(Debug, Clone, Copy)]
pub struct MemoryRead<'a, T: Scalar> {
    pub bank: &'a MemoryBank<T>,
    pub frame: usize,
    pub mode: AttentionMode,
}

/// What the attention block attends to.
#[derive(Debug, Clone, Copy)]
pub enum Context<'a, T: Scalar> {
    /// The stored memory of earlier frames.
    Memory(MemoryRead<'a, T>),
    /// The frame's own keys and (optionally Fg/Bg-embedded) values, used to
    /// seed an empty memory. `mask` holds one value per token.
    Own {
        grid: (usize, usize),
        window: usize,
        mode: AttentionMode,
        mask: Option<&'a Tensor<T>>,
        embeddings: (&'a Tensor<T>, &'a Tensor<T>),
    },
}

impl TransformerLayer {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        index: usize,
        hidden: usize,
        heads: usize,
        mlp_ratio: usize,
    ) -> Result<Self> {
        let n = |s: &str| format!("transformer.layer{index}.{s}");
        Ok(Self {
            index,
            heads,
            ln_attn: LayerNorm::new(store, &n("ln_attn"), hidden)?,
            q: Linear::new(store, rng, &n("q"), hidden, hidden)?,
            k: Linear::new(store, rng, &n("k"), hidden, hidden)?,
            v: Linear::new(store, rng, &n("v"), hidden, hidden)?,
            out: Linear::new(store, rng, &n("out"), hidden, hidden)?,
            ln_mlp: LayerNorm::new(store, &n("ln_mlp"), hidden)?,
            fc1: Linear::new(store, rng, &n("fc1"), hidden, hidden * mlp_ratio)?,
            fc2: Linear::new(store, rng, &n("fc2"), hidden * mlp_ratio, hidden)?,
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn qkv_weights<'a, T: Scalar>(&self, store: &'a ParamStore<T>) -> QkvWeights<'a, T> {
        QkvWeights {
            wq: self.q.weight(store),
            bq: self.q.bias(store),
            wk: self.k.weight(store),
            bk: self.k.bias(store),
            wv: self.v.weight(store),
            bv: self.v.bias(store),
        }
    }

    /// One pre-norm block. Returns the updated tokens and this frame's raw
    /// key/value.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        z: &Tensor<T>,
        context: Context<'_, T>,
    ) -> Result<(Tensor<T>, KeyValue<T>)> {
        let x = self.ln_attn.forward(store, z)?;
        let qkv = project_qkv(&x, &self.qkv_weights(store))?;
        let (long, short) = match context {
            Context::Memory(read) => {
                let cfg = read.bank.config();
                let long = if read.mode.uses_long()
                    && read.bank.reads_long(read.frame)
                    && !read.bank.long().is_empty()
                {
                    Some(long_term_attention(
                        &qkv.q, read.bank, self.index, self.heads,
                    )?)
                } else {
                    None
                };
                let short = if read.mode.uses_short() {
                    Some(short_term_attention(
                        &qkv.q,
                        read.bank,
                        self.index,
                        self.heads,
                        cfg.window,
                        cfg.short_capacity,
                    )?)
                } else {
                    None
                };
                (long, short)
            }
            Context::Own {
                grid,
                window,
                mode,
                mask,
                embeddings: (e_f, e_b),
            } => {
                let v = match mask {
                    Some(m) => embed_fgbg(&qkv.v, m, e_f, e_b)?,
                    None => qkv.v.clone(),
                };
                let long = if mode.uses_long() {
                    Some(Tensor::attention(&qkv.q, &qkv.k, &v, self.heads, None)?)
                } else {
                    None
                };
                let short = if mode.uses_short() {
                    Some(windowed_attention(
                        &qkv.q, &qkv.k, &v, self.heads, grid, window,
                    )?)
                } else {
                    None
                };
                (long, short)
            }
        };
        let attended = match (long, short) {
            (Some(l), Some(s)) => Some(fuse(&l, &s)?),
            (l, s) => l.or(s),
        };
        let z = match attended {
            Some(a) => z.add(&self.out.forward(store, &a)?)?,
            None => z.clone(),
        };
        let y = self.ln_mlp.forward(store, &z)?;
        let y = self
            .fc2
            .forward(store, &self.fc1.forward(store, &y)?.gelu()?)?;
        Ok((
            z.add(&y)?,
            KeyValue {
                key: qkv.k,
                value: qkv.v,
            },
        ))
    }
}

#[derive(Debug, Clone)]
pub struct TransformerOutput<T: Scalar = f32> {
    /// Updated `P×C` tokens.
    pub z: Tensor<T>,
    /// Raw (not yet embedded) key/value of each layer.
    pub memory: Vec<KeyValue<T>>,
}

#[derive(Debug, Clone)]
pub struct FgBgTransformer {
    hidden: usize,
    layers: Vec<TransformerLayer>,
    e_f: ParamId,
    e_b: ParamId,
}

impl FgBgTransformer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let hidden = cfg.encoder.hidden;
        let t = &cfg.transformer;
        let layers = (0..t.layers)
            .map(|i| TransformerLayer::new(store, rng, i, hidden, t.heads, t.mlp_ratio))
            .collect::<Result<_>>()?;
        let e_f = store.add_param("transformer.e_f", &[hidden], uniform(rng, hidden, 0.5))?;
        let e_b = store.add_param("transformer.e_b", &[hidden], uniform(rng, hidden, 0.5))?;
        Ok(Self {
            hidden,
            layers,
            e_f,
            e_b,
        })
    }

    pub fn layers(&self) -> &[TransformerLayer] {
        &self.layers
    }

    pub fn embeddings<'a, T: Scalar>(
        &self,
        store: &'a ParamStore<T>,
    ) -> (&'a Tensor<T>, &'a Tensor<T>) {
        (store.get(self.e_f), store.get(self.e_b))
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        tokens: &Tensor<T>,
        context: Context<'_, T>,
    ) -> Result<TransformerOutput<T>> {
        if tokens.ndim() != 2 || tokens.shape()[1] != self.hidden {
            return Err(Error::Dimension(format!(
                "transformer expects P×{} tokens, got {:?}",
                self.hidden,
                tokens.shape()
            )));
        }
        let mut z = tokens.clone();
        let mut kv = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, raw) = layer.forward(store, &z, context)?;
            z = next;
            kv.push(raw);
        }
        Ok(TransformerOutput { z, memory: kv })
    }

    /// Fg/Bg-embeds each layer's value with `mask` (`P` values); `None`
    /// stores the raw values.
    pub fn embed_memory<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        raw: &[KeyValue<T>],
        mask: Option<&Tensor<T>>,
    ) -> Result<Vec<KeyValue<T>>> {
        let (e_f, e_b) = self.embeddings(store);
        raw.iter()
            .map(|kv| {
                let value = match mask {
                    Some(m) => embed_fgbg(&kv.value, m, e_f, e_b)?,
                    None => kv.value.clone(),
                };
                Ok(KeyValue {
                    key: kv.key.clone(),
                    value,
                })
            })
            .collect()
    }
}
