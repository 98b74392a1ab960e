//! Four upscaling blocks with skip connections and the coarse/fine output heads.

use adamatte_tensor::{Conv2dParams, ParamStore, Scalar, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::encoder::FramePyramid;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv, Mode};

#[derive(Debug, Clone)]
pub struct DecoderOutputs<T: Scalar = f32> {
    /// Fg/Bg logits, `2×H/4×W/4`; channel 1 is foreground.
    pub mask_logits: Tensor<T>,
    /// `1×H/4×W/4` in `[0, 1]`.
    pub alpha_coarse: Tensor<T>,
    /// `1×H×W` in `[0, 1]`.
    pub alpha_fine: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct UpscaleBlock {
    cin: usize,
    conv1: Conv,
    bn: BatchNorm,
    conv2: Conv,
}

impl UpscaleBlock {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        let same = Conv2dParams::same(3, 1);
        Ok(Self {
            cin,
            conv1: Conv::new(
                store,
                rng,
                &format!("{name}.conv1"),
                cin,
                cout,
                3,
                same,
                false,
            )?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout)?,
            conv2: Conv::new(
                store,
                rng,
                &format!("{name}.conv2"),
                cout,
                cout,
                3,
                same,
                true,
            )?,
        })
    }

    /// Concatenates `prev` with the optional `skip` maps along channels,
    /// convolves and upsamples 2×.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        prev: &Tensor<T>,
        skips: &[&Tensor<T>],
        mode: Mode,
    ) -> Result<Tensor<T>> {
        let mut parts = vec![prev];
        parts.extend_from_slice(skips);
        if parts
            .iter()
            .any(|t| t.ndim() != 3 || t.shape()[1..] != prev.shape()[1..])
        {
            let shapes: Vec<_> = parts.iter().map(|t| t.shape().to_vec()).collect();
            return Err(Error::Dimension(format!(
                "upscale inputs are not spatially aligned: {shapes:?}"
            )));
        }
        let x = Tensor::concat(&parts, 0)?;
        if x.shape()[0] != self.cin {
            return Err(Error::Dimension(format!(
                "upscale block expects {} input channels, got {}",
                self.cin,
                x.shape()[0]
            )));
        }
        let y = self
            .bn
            .forward(store, &self.conv1.forward(store, &x)?, mode)?
            .relu()?;
        let y = self.conv2.forward(store, &y)?;
        let (h, w) = (y.shape()[1], y.shape()[2]);
        Ok(y.bilinear_resize(2 * h, 2 * w)?)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    blocks: Vec<UpscaleBlock>,
    mask_head: Conv,
    coarse_head: Conv,
    fine_conv: Conv,
    fine_bn: BatchNorm,
    fine_out: Conv,
}

impl Decoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let [c2, c4, c8, _] = cfg.encoder.channels;
        let w = cfg.decoder.widths;
        let inputs = [cfg.encoder.hidden, w[0] + c8, w[1] + c4 + 1, w[2] + c2];
        let blocks = inputs
            .iter()
            .zip(w)
            .enumerate()
            .map(|(i, (&cin, cout))| {
                UpscaleBlock::new(store, rng, &format!("decoder.up{}", i + 1), cin, cout)
            })
            .collect::<Result<_>>()?;
        let same = Conv2dParams::same(3, 1);
        Ok(Self {
            blocks,
            mask_head: Conv::new(store, rng, "decoder.mask_head", w[1], 2, 3, same, true)?,
            coarse_head: Conv::new(store, rng, "decoder.coarse_head", w[1], 1, 3, same, true)?,
            fine_conv: Conv::new(store, rng, "decoder.fine_conv", w[3], w[3], 3, same, false)?,
            fine_bn: BatchNorm::new(store, "decoder.fine_bn", w[3])?,
            fine_out: Conv::new(store, rng, "decoder.fine_out", w[3], 1, 3, same, true)?,
        })
    }

    /// Upscaling block `level` (1-based, coarsest first).
    pub fn block(&self, level: usize) -> &UpscaleBlock {
        &self.blocks[level - 1]
    }

    /// Coarse heads on a 1/4-scale feature: `(mask logits, coarse alpha)`.
    pub fn output_block_coarse<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        feat: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let mask = self.mask_head.forward(store, feat)?;
        let alpha = self.coarse_head.forward(store, feat)?.sigmoid()?;
        Ok((mask, alpha))
    }

    pub fn decode<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        z_prime: &Tensor<T>,
        pyramid: &FramePyramid<T>,
        mode: Mode,
    ) -> Result<DecoderOutputs<T>> {
        let x = self.blocks[0].forward(store, z_prime, &[], mode)?;
        let x = self.blocks[1].forward(store, &x, &[&pyramid.f_eighth], mode)?;
        let (mask_logits, alpha_coarse) = self.output_block_coarse(store, &x)?;
        let x = self.blocks[2].forward(store, &x, &[&pyramid.f_quarter, &alpha_coarse], mode)?;
        let x = self.blocks[3].forward(store, &x, &[&pyramid.f_half], mode)?;
        let y = self
            .fine_bn
            .forward(store, &self.fine_conv.forward(store, &x)?, mode)?
            .relu()?;
        let alpha_fine = self.fine_out.forward(store, &y)?.sigmoid()?;
        Ok(DecoderOutputs {
            mask_logits,
            alpha_coarse,
            alpha_fine,
        })
    }
}

/// Foreground probability of the mask logits, area-averaged from 1/4 to
/// the 1/16 grid.
pub fn mask_to_guidance<T: Scalar>(mask_logits: &Tensor<T>) -> Result<Tensor<T>> {
    if mask_logits.ndim() != 3 || mask_logits.shape()[0] != 2 {
        return Err(Error::Dimension(format!(
            "mask logits must be 2×h×w, got {:?}",
            mask_logits.shape()
        )));
    }
    let fg = mask_logits.softmax(0)?.narrow(0, 1, 1)?;
    Ok(fg.avg_pool(4)?)
}
