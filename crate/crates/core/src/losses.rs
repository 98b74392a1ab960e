//! Training objective: Fg/Bg pseudo labels, mask BCE, alpha L1 and the
//! Laplacian-pyramid loss, combined with per-head weights.

use adamatte_tensor::{no_grad, Conv2dParams, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::decoder::DecoderOutputs;
use crate::error::{Error, Result};

/// Probability clamp for the cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;
/// Maximum number of Laplacian pyramid levels.
pub const MAX_PYRAMID_LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mask: f64,
    pub coarse: f64,
    pub fine: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mask: 0.5,
            coarse: 0.5,
            fine: 1.0,
        }
    }
}

/// Binary foreground indicator `alpha >= tau`; not differentiable.
pub fn pseudo_mask<T: Scalar>(alpha_gt: &Tensor<T>, tau: f64) -> Result<Tensor<T>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("threshold {tau} must lie in (0, 1)")));
    }
    let t = T::of(tau);
    let data = alpha_gt
        .data()
        .iter()
        .map(|&a| if a >= t { T::one() } else { T::zero() })
        .collect();
    Ok(Tensor::from_vec(alpha_gt.shape(), data)?)
}

/// Mean binary cross-entropy between the foreground probability of the
/// `2×h×w` logits and the `h×w` target.
pub fn mask_bce<T: Scalar>(mask_logits: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let s = mask_logits.shape();
    if s.len() != 3 || s[0] != 2 || target.numel() != s[1] * s[2] {
        return Err(Error::Dimension(format!(
            "mask logits {s:?} vs target {:?}",
            target.shape()
        )));
    }
    let p = mask_logits
        .softmax(0)?
        .narrow(0, 1, 1)?
        .clamp(T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP))?;
    let m = target.reshape(p.shape())?;
    let pos = m.mul(&p.ln()?)?;
    let neg = m.one_minus()?.mul(&p.one_minus()?.ln()?)?;
    Ok(pos.add(&neg)?.mean()?.neg()?)
}

fn check_same(op: &str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn alpha_l1<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Tensor<T>> {
    check_same("alpha_l1", pred, gt)?;
    Ok(pred.sub(gt)?.abs()?.mean()?)
}

/// Number of pyramid levels used for a `h×w` map.
pub fn pyramid_levels(h: usize, w: usize) -> usize {
    let side = h.min(w).max(1);
    (usize::BITS - 1 - side.leading_zeros()).clamp(1, MAX_PYRAMID_LEVELS as u32) as usize
}

fn binomial_kernel<T: Scalar>() -> Tensor<T> {
    let taps = [1.0, 4.0, 6.0, 4.0, 1.0];
    let data = taps
        .iter()
        .flat_map(|&a| taps.iter().map(move |&b| T::of(a * b / 256.0)))
        .collect();
    Tensor::from_vec(&[1, 1, 5, 5], data).expect("5×5 kernel")
}

/// Blur with a 5×5 binomial kernel (replicated borders), then keep every
/// other row and column.
fn blur_down<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(x.pad_replicate(2)?
        .conv2d(kernel, None, Conv2dParams::new(2, 0, 1))?)
}

/// Laplacian bands of a `1×H×W` map, finest first. Each band is the level
/// minus the bilinear upsampling of the next; the last entry is the
/// low-pass residual.
pub fn laplacian_pyramid<T: Scalar>(x: &Tensor<T>, levels: usize) -> Result<Vec<Tensor<T>>> {
    if x.ndim() != 3 || x.shape()[0] != 1 {
        return Err(Error::Dimension(format!(
            "pyramid expects 1×H×W, got {:?}",
            x.shape()
        )));
    }
    let kernel = binomial_kernel();
    let mut bands = Vec::with_capacity(levels);
    let mut g = x.clone();
    for _ in 1..levels {
        let next = blur_down(&g, &kernel)?;
        let up = next.bilinear_resize(g.shape()[1], g.shape()[2])?;
        bands.push(g.sub(&up)?);
        g = next;
    }
    bands.push(g);
    Ok(bands)
}

/// `Σ_s (2^(s-1)/5) · mean|L_s(pred) − L_s(gt)|` over the pyramid levels.
pub fn laplacian_pyramid_loss<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Tensor<T>> {
    check_same("laplacian_pyramid_loss", pred, gt)?;
    let levels = pyramid_levels(pred.shape()[1], pred.shape()[2]);
    let bp = laplacian_pyramid(pred, levels)?;
    let bg = laplacian_pyramid(gt, levels)?;
    let mut total: Option<Tensor<T>> = None;
    for (s, (p, g)) in bp.iter().zip(&bg).enumerate() {
        let term = p
            .sub(g)?
            .abs()?
            .mean()?
            .scale(T::of((1u32 << s) as f64 / 5.0))?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one level"))
}

/// Ground truth derived from the full-resolution alpha for one frame.
#[derive(Debug, Clone)]
pub struct FrameTargets<T: Scalar = f32> {
    pub alpha: Tensor<T>,
    /// Area average of `alpha` at 1/4 scale.
    pub alpha_quarter: Tensor<T>,
    /// Pseudo mask of `alpha_quarter`.
    pub mask_quarter: Tensor<T>,
}

impl<T: Scalar> FrameTargets<T> {
    pub fn new(alpha: &Tensor<T>, tau: f64) -> Result<Self> {
        let alpha = alpha.detach();
        let alpha_quarter = no_grad(|| alpha.avg_pool(4))?;
        let mask_quarter = pseudo_mask(&alpha_quarter, tau)?;
        Ok(Self {
            alpha,
            alpha_quarter,
            mask_quarter,
        })
    }
}

/// The weighted total and its unweighted components.
#[derive(Debug, Clone)]
pub struct LossBreakdown<T: Scalar = f32> {
    pub total: Tensor<T>,
    pub mask_bce: f64,
    pub coarse_l1: f64,
    pub coarse_lap: f64,
    pub fine_l1: f64,
    pub fine_lap: f64,
}

fn value<T: Scalar>(t: &Tensor<T>) -> Result<f64> {
    Ok(t.item()?.as_f64())
}

pub fn total_loss<T: Scalar>(
    outputs: &DecoderOutputs<T>,
    targets: &FrameTargets<T>,
    w: &LossWeights,
) -> Result<LossBreakdown<T>> {
    let bce = mask_bce(&outputs.mask_logits, &targets.mask_quarter)?;
    let c_l1 = alpha_l1(&outputs.alpha_coarse, &targets.alpha_quarter)?;
    let c_lap = laplacian_pyramid_loss(&outputs.alpha_coarse, &targets.alpha_quarter)?;
    let f_l1 = alpha_l1(&outputs.alpha_fine, &targets.alpha)?;
    let f_lap = laplacian_pyramid_loss(&outputs.alpha_fine, &targets.alpha)?;
    let total = bce
        .scale(T::of(w.mask))?
        .add(&c_l1.add(&c_lap)?.scale(T::of(w.coarse))?)?
        .add(&f_l1.add(&f_lap)?.scale(T::of(w.fine))?)?;
    Ok(LossBreakdown {
        mask_bce: value(&bce)?,
        coarse_l1: value(&c_l1)?,
        coarse_lap: value(&c_lap)?,
        fine_l1: value(&f_l1)?,
        fine_lap: value(&f_lap)?,
        total,
    })
}

/// Segmentation-only objective: the mask cross-entropy alone.
pub fn mask_only_loss<T: Scalar>(
    outputs: &DecoderOutputs<T>,
    targets: &FrameTargets<T>,
) -> Result<LossBreakdown<T>> {
    let bce = mask_bce(&outputs.mask_logits, &targets.mask_quarter)?;
    Ok(LossBreakdown {
        mask_bce: value(&bce)?,
        coarse_l1: 0.0,
        coarse_lap: 0.0,
        fine_l1: 0.0,
        fine_lap: 0.0,
        total: bce,
    })
}
