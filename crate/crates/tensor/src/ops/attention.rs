//! Fused multi-head scaled dot-product attention with an optional key mask.

use crate::error::{contract_err, dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which keys each query may attend to; row-major `queries × keys`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(queries: usize, keys: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != queries * keys {
            return dim_err(
                "attention_mask",
                format!("{} flags for {queries}×{keys}", allowed.len()),
            );
        }
        Ok(Self {
            queries,
            keys,
            allowed,
        })
    }

    pub fn from_fn(queries: usize, keys: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..queries)
            .flat_map(|i| (0..keys).map(move |j| (i, j)))
            .map(|(i, j)| f(i, j))
            .collect();
        Self {
            queries,
            keys,
            allowed,
        }
    }

    #[inline]
    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.keys + key]
    }

    /// Number of keys visible to `query`.
    pub fn count(&self, query: usize) -> usize {
        self.allowed[query * self.keys..(query + 1) * self.keys]
            .iter()
            .filter(|&&a| a)
            .count()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.queries, self.keys)
    }
}

/// Softmax attention weights, laid out `heads × P × N`; masked entries are 0.
///
/// `q` is `P×C`, `k` is `N×C` (row-major) and `C` must be divisible by `heads`.
pub fn attention_probs<T: Scalar>(
    q: &[T],
    k: &[T],
    channels: usize,
    heads: usize,
    mask: Option<&AttentionMask>,
) -> Result<Vec<T>> {
    if heads == 0 || channels % heads != 0 || q.len() % channels != 0 || k.len() % channels != 0 {
        return dim_err(
            "attention",
            format!("{channels} channels do not split into {heads} heads"),
        );
    }
    let (p, n) = (q.len() / channels, k.len() / channels);
    if let Some(m) = mask {
        if m.shape() != (p, n) {
            return dim_err("attention", format!("mask {:?} for {p}×{n}", m.shape()));
        }
    }
    let dh = channels / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut probs = vec![T::zero(); heads * p * n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..p {
            let qi = &q[i * channels + off..i * channels + off + dh];
            let row = &mut probs[(h * p + i) * n..(h * p + i + 1) * n];
            let mut max = T::neg_infinity();
            for (j, s) in row.iter_mut().enumerate() {
                if mask.is_some_and(|m| !m.allows(i, j)) {
                    continue;
                }
                let kj = &k[j * channels + off..j * channels + off + dh];
                let dot: T = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum();
                *s = dot * scale;
                max = max.max(*s);
            }
            if max == T::neg_infinity() {
                return contract_err("attention", format!("query {i} has no visible keys"));
            }
            let mut sum = T::zero();
            for (j, s) in row.iter_mut().enumerate() {
                if mask.is_some_and(|m| !m.allows(i, j)) {
                    *s = T::zero();
                    continue;
                }
                *s = (*s - max).exp();
                sum += *s;
            }
            row.iter_mut().for_each(|s| *s /= sum);
        }
    }
    Ok(probs)
}

impl<T: Scalar> Tensor<T> {
    /// `softmax(q kᵀ / sqrt(d_head)) v` per head; `q: P×C`, `k, v: N×C`.
    pub fn attention(
        q: &Self,
        k: &Self,
        v: &Self,
        heads: usize,
        mask: Option<&AttentionMask>,
    ) -> Result<Self> {
        if q.ndim() != 2 || k.ndim() != 2 || v.shape() != k.shape() || q.shape()[1] != k.shape()[1]
        {
            return dim_err(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
            );
        }
        let (p, c, n) = (q.shape()[0], q.shape()[1], k.shape()[0]);
        let probs = attention_probs(q.data(), k.data(), c, heads, mask)?;
        let dh = c / heads;
        let mut out = vec![T::zero(); p * c];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..p {
                let a = &probs[(h * p + i) * n..(h * p + i + 1) * n];
                let o = &mut out[i * c + off..i * c + off + dh];
                for (j, &w) in a.iter().enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    let vj = &v.data()[j * c + off..j * c + off + dh];
                    o.iter_mut().zip(vj).for_each(|(o, &vv)| *o += w * vv);
                }
            }
        }
        let (qc, kc, vc) = (q.clone(), k.clone(), v.clone());
        let scale = T::one() / T::of(dh as f64).sqrt();
        Tensor::from_op(
            "attention",
            vec![p, c],
            out,
            vec![q.clone(), k.clone(), v.clone()],
            move |g, _| {
                let (qd, kd, vd) = (qc.data(), kc.data(), vc.data());
                let mut gq = vec![T::zero(); p * c];
                let mut gk = vec![T::zero(); n * c];
                let mut gv = vec![T::zero(); n * c];
                let mut da = vec![T::zero(); n];
                for h in 0..heads {
                    let off = h * dh;
                    for i in 0..p {
                        let a = &probs[(h * p + i) * n..(h * p + i + 1) * n];
                        let gi = &g[i * c + off..i * c + off + dh];
                        let mut dot = T::zero();
                        for j in 0..n {
                            if a[j] == T::zero() {
                                da[j] = T::zero();
                                continue;
                            }
                            let vj = &vd[j * c + off..j * c + off + dh];
                            da[j] = gi.iter().zip(vj).map(|(&x, &y)| x * y).sum();
                            dot += a[j] * da[j];
                            gv[j * c + off..j * c + off + dh]
                                .iter_mut()
                                .zip(gi)
                                .for_each(|(o, &x)| *o += a[j] * x);
                        }
                        for j in 0..n {
                            if a[j] == T::zero() {
                                continue;
                            }
                            let ds = a[j] * (da[j] - dot) * scale;
                            for d in 0..dh {
                                gq[i * c + off + d] += ds * kd[j * c + off + d];
                                gk[j * c + off + d] += ds * qd[i * c + off + d];
                            }
                        }
                    }
                }
                vec![Some(gq), Some(gk), Some(gv)]
            },
        )
    }
}
