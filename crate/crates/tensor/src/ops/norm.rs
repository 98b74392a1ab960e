use crate::error::{dim_err, Result};
use crate::ops::shape::split_axis;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    /// Number of values each statistic was computed over.
    pub count: usize,
}

/// Normalizes each contiguous row of length `n`. Returns `(xhat, inv_std, mean, var)`.
fn normalize_rows<T: Scalar>(x: &[T], n: usize, eps: T) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / n;
    let inv_n = T::one() / T::of(n as f64);
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(rows);
    let mut means = Vec::with_capacity(rows);
    let mut vars = Vec::with_capacity(rows);
    for row in x.chunks(n) {
        let mean = row.iter().copied().sum::<T>() * inv_n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let is = T::one() / (var + eps).sqrt();
        xhat.extend(row.iter().map(|&v| (v - mean) * is));
        inv_std.push(is);
        means.push(mean);
        vars.push(var);
    }
    (xhat, inv_std, means, vars)
}

/// Gradient through `xhat = (x - mean) * inv_std` for one row, given `d xhat`.
fn row_backward<T: Scalar>(dxhat: &[T], xhat: &[T], inv_std: T, out: &mut [T]) {
    let n = T::of(dxhat.len() as f64);
    let sum_d: T = dxhat.iter().copied().sum();
    let sum_dx: T = dxhat.iter().zip(xhat).map(|(&d, &x)| d * x).sum();
    for ((o, &d), &x) in out.iter_mut().zip(dxhat).zip(xhat) {
        *o = inv_std / n * (n * d - sum_d - x * sum_dx);
    }
}

impl<T: Scalar> Tensor<T> {
    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.ndim() {
            return dim_err(
                "softmax",
                format!("axis {axis} for shape {:?}", self.shape()),
            );
        }
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| x[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for j in 0..n {
                    let e = (x[idx(j)] - max).exp();
                    y[idx(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    y[idx(j)] /= sum;
                }
            }
        }
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            move |g, y| {
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: T = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    /// Layer norm over the last axis of an `M×N` matrix with affine `gamma`, `beta` of length `N`.
    pub fn layer_norm(&self, gamma: &Self, beta: &Self, eps: T) -> Result<Self> {
        if self.ndim() != 2 || gamma.numel() != self.shape()[1] || beta.numel() != self.shape()[1] {
            return dim_err(
                "layer_norm",
                format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    self.shape(),
                    gamma.shape(),
                    beta.shape()
                ),
            );
        }
        let n = self.shape()[1];
        let (xhat, inv_std, _, _) = normalize_rows(self.data(), n, eps);
        let out = xhat
            .chunks(n)
            .flat_map(|r| {
                r.iter()
                    .zip(gamma.data().iter().zip(beta.data()))
                    .map(|(&x, (&g, &b))| x * g + b)
            })
            .collect();
        let flags = [
            self.requires_grad(),
            gamma.requires_grad(),
            beta.requires_grad(),
        ];
        let gm = gamma.clone();
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, _| {
                let gx = flags[0].then(|| {
                    let mut gx = vec![T::zero(); g.len()];
                    let mut dxhat = vec![T::zero(); n];
                    for (r, (gr, xr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        dxhat
                            .iter_mut()
                            .zip(gr.iter().zip(gm.data()))
                            .for_each(|(d, (&gv, &gg))| *d = gv * gg);
                        row_backward(&dxhat, xr, inv_std[r], &mut gx[r * n..(r + 1) * n]);
                    }
                    gx
                });
                let ggamma = flags[1].then(|| {
                    let mut acc = vec![T::zero(); n];
                    for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            acc[j] += gr[j] * xr[j];
                        }
                    }
                    acc
                });
                let gbeta = flags[2].then(|| {
                    let mut acc = vec![T::zero(); n];
                    for gr in g.chunks(n) {
                        acc.iter_mut().zip(gr).for_each(|(a, &v)| *a += v);
                    }
                    acc
                });
                vec![gx, ggamma, gbeta]
            },
        )
    }

    fn check_bn(&self, gamma: &Self, beta: &Self) -> Result<(usize, usize)> {
        if self.ndim() != 3 || gamma.numel() != self.shape()[0] || beta.numel() != self.shape()[0] {
            return dim_err(
                "batch_norm",
                format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    self.shape(),
                    gamma.shape(),
                    beta.shape()
                ),
            );
        }
        Ok((self.shape()[0], self.shape()[1] * self.shape()[2]))
    }

    /// Batch norm of a `C×H×W` tensor using statistics of this input.
    pub fn batch_norm_train(
        &self,
        gamma: &Self,
        beta: &Self,
        eps: T,
    ) -> Result<(Self, BatchStats<T>)> {
        let (c, hw) = self.check_bn(gamma, beta)?;
        let (xhat, inv_std, mean, var) = normalize_rows(self.data(), hw, eps);
        let mut out = Vec::with_capacity(c * hw);
        for (ch, row) in xhat.chunks(hw).enumerate() {
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            out.extend(row.iter().map(|&x| x * g + b));
        }
        let flags = [
            self.requires_grad(),
            gamma.requires_grad(),
            beta.requires_grad(),
        ];
        let gm = gamma.clone();
        let y = Tensor::from_op(
            "batch_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, _| {
                let gx = flags[0].then(|| {
                    let mut gx = vec![T::zero(); g.len()];
                    let mut dxhat = vec![T::zero(); hw];
                    for ch in 0..c {
                        let gr = &g[ch * hw..(ch + 1) * hw];
                        let gg = gm.data()[ch];
                        dxhat.iter_mut().zip(gr).for_each(|(d, &v)| *d = v * gg);
                        row_backward(
                            &dxhat,
                            &xhat[ch * hw..(ch + 1) * hw],
                            inv_std[ch],
                            &mut gx[ch * hw..(ch + 1) * hw],
                        );
                    }
                    gx
                });
                let ggamma = flags[1].then(|| {
                    g.chunks(hw)
                        .zip(xhat.chunks(hw))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(&a, &b)| a * b).sum())
                        .collect()
                });
                let gbeta =
                    flags[2].then(|| g.chunks(hw).map(|r| r.iter().copied().sum()).collect());
                vec![gx, ggamma, gbeta]
            },
        )?;
        Ok((
            y,
            BatchStats {
                mean,
                var,
                count: hw,
            },
        ))
    }

    /// Batch norm of a `C×H×W` tensor with fixed (running) statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Self,
        beta: &Self,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Self> {
        let (c, hw) = self.check_bn(gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return dim_err(
                "batch_norm",
                format!("running stats for {} channels, need {c}", mean.len()),
            );
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mean = mean.to_vec();
        let xhat: Vec<T> = self
            .data()
            .chunks(hw)
            .enumerate()
            .flat_map(|(ch, row)| {
                let (m, s) = (mean[ch], inv_std[ch]);
                row.iter().map(move |&x| (x - m) * s)
            })
            .collect();
        let out = xhat
            .chunks(hw)
            .enumerate()
            .flat_map(|(ch, row)| {
                let (g, b) = (gamma.data()[ch], beta.data()[ch]);
                row.iter().map(move |&x| x * g + b)
            })
            .collect();
        let flags = [
            self.requires_grad(),
            gamma.requires_grad(),
            beta.requires_grad(),
        ];
        let gm = gamma.clone();
        Tensor::from_op(
            "batch_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g, _| {
                let gx = flags[0].then(|| {
                    g.chunks(hw)
                        .enumerate()
                        .flat_map(|(ch, r)| {
                            let s = gm.data()[ch] * inv_std[ch];
                            r.iter().map(move |&v| v * s)
                        })
                        .collect()
                });
                let ggamma = flags[1].then(|| {
                    g.chunks(hw)
                        .zip(xhat.chunks(hw))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(&a, &b)| a * b).sum())
                        .collect()
                });
                let gbeta =
                    flags[2].then(|| g.chunks(hw).map(|r| r.iter().copied().sum()).collect());
                vec![gx, ggamma, gbeta]
            },
        )
    }
}
