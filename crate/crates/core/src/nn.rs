//! Parameterised building blocks registered in a [`ParamStore`].

use adamatte_tensor::{BufferId, Conv2dParams, ParamId, ParamStore, Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Whether normalization layers use batch statistics (and update their
/// running estimates) or the frozen running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::of(rng.gen_range(-bound..bound)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    params: Conv2dParams,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        params: Conv2dParams,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = cin * kernel * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = store.add_param(
            &format!("{name}.weight"),
            &[cout, cin, kernel, kernel],
            uniform(rng, cout * fan_in, bound),
        )?;
        let bias = if bias {
            Some(store.add_param(&format!("{name}.bias"), &[cout], vec![T::zero(); cout])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            params,
        })
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let bias = self.bias.map(|b| store.get(b));
        Ok(x.conv2d(store.get(self.weight), bias, self.params)?)
    }
}

/// `y = x W + b` on a `P×in` token matrix.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.add_param(
            &format!("{name}.weight"),
            &[input, output],
            uniform(rng, input * output, bound),
        )?;
        let bias = store.add_param(&format!("{name}.bias"), &[output], vec![T::zero(); output])?;
        Ok(Self { weight, bias })
    }

    pub fn weight<'a, T: Scalar>(&self, store: &'a ParamStore<T>) -> &'a Tensor<T> {
        store.get(self.weight)
    }

    pub fn bias<'a, T: Scalar>(&self, store: &'a ParamStore<T>) -> &'a Tensor<T> {
        store.get(self.bias)
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.matmul(store.get(self.weight))?
            .add_row(store.get(self.bias))?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Result<Self> {
        let gamma = store.add_param(&format!("{name}.gamma"), &[width], vec![T::one(); width])?;
        let beta = store.add_param(&format!("{name}.beta"), &[width], vec![T::zero(); width])?;
        Ok(Self { gamma, beta })
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.layer_norm(
            store.get(self.gamma),
            store.get(self.beta),
            T::of(Self::EPS),
        )?)
    }
}

/// Per-channel batch norm over the spatial positions of one `C×H×W` frame.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: BufferId,
    running_var: BufferId,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_param(
                &format!("{name}.gamma"),
                &[channels],
                vec![T::one(); channels],
            )?,
            beta: store.add_param(
                &format!("{name}.beta"),
                &[channels],
                vec![T::zero(); channels],
            )?,
            running_mean: store.add_buffer(
                &format!("{name}.running_mean"),
                &[channels],
                vec![T::zero(); channels],
            )?,
            running_var: store.add_buffer(
                &format!("{name}.running_var"),
                &[channels],
                vec![T::one(); channels],
            )?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        let (gamma, beta) = (store.get(self.gamma), store.get(self.beta));
        let eps = T::of(Self::EPS);
        match mode {
            Mode::Eval => {
                let mean = store.buffer(self.running_mean);
                let var = store.buffer(self.running_var);
                Ok(x.batch_norm_eval(gamma, beta, &mean, &var, eps)?)
            }
            Mode::Train => {
                let (y, stats) = x.batch_norm_train(gamma, beta, eps)?;
                let m = T::of(Self::MOMENTUM);
                let n = stats.count as f64;
                let correction = T::of(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
                let previous = store.buffer(self.running_mean);
                store.update_buffer(self.running_mean, |rm| {
                    rm.iter_mut()
                        .zip(&stats.mean)
                        .for_each(|(r, &b)| *r = (T::one() - m) * *r + m * b);
                });
                // A batch is a single frame, so the spread of per-frame means
                // around the running mean is folded into the variance.
                store.update_buffer(self.running_var, |rv| {
                    for ((r, &b), (&mu, &prev)) in rv
                        .iter_mut()
                        .zip(&stats.var)
                        .zip(stats.mean.iter().zip(&previous))
                    {
                        let shift = mu - prev;
                        *r = (T::one() - m) * *r + m * (b * correction + shift * shift);
                    }
                });
                Ok(y)
            }
        }
    }
}
