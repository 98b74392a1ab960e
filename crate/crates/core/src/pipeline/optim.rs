//! AdamW with decoupled weight decay, global-norm clipping and the
//! warmup-plus-cosine learning-rate schedule.

use adamatte_tensor::{ParamStore, Scalar};

use crate::error::Result;

/// Linear warmup from 0 to `base` over `warmup` steps, then cosine decay
/// reaching 0 at step `total`.
pub fn lr_at(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    if step < warmup {
        return base * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: i32,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
        }
    }

    /// Current gradients of every parameter (zeros where none flowed).
    pub fn gradients<T: Scalar>(store: &ParamStore<T>) -> Vec<Vec<f64>> {
        store
            .params()
            .iter()
            .map(|p| match p.tensor.grad() {
                Some(g) => g.iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0; p.tensor.numel()],
            })
            .collect()
    }

    /// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
    /// returns the norm before clipping.
    pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max_norm {
            let s = max_norm / norm;
            grads.iter_mut().flatten().for_each(|g| *g *= s);
        }
        norm
    }

    /// One update with learning rate `lr`. Weight decay applies only to
    /// parameters with two or more axes (weight matrices and kernels).
    pub fn step<T: Scalar>(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[Vec<f64>],
        lr: f64,
    ) -> Result<()> {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps);
        let bc2 = 1.0 - self.beta2.powi(self.steps);
        for (i, g) in grads.iter().enumerate() {
            let p = &store.params()[i].tensor;
            let decay = if p.ndim() >= 2 {
                self.weight_decay
            } else {
                0.0
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = p
                .data()
                .iter()
                .enumerate()
                .map(|(j, &w)| {
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                    let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                    let w = w.as_f64();
                    T::of(w - lr * (update + decay * w))
                })
                .collect();
            store.set_param_data(i, data)?;
        }
        Ok(())
    }
}
