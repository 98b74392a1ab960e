//! Strided convolutional backbone producing the 1/2 .. 1/16 feature pyramid.

use adamatte_tensor::{Conv2dParams, ParamStore, Scalar, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv, Mode};

/// Feature maps of one frame, coarsest last.
#[derive(Debug, Clone)]
pub struct FramePyramid<T: Scalar = f32> {
    pub f_half: Tensor<T>,
    pub f_quarter: Tensor<T>,
    pub f_eighth: Tensor<T>,
    pub f_sixteenth: Tensor<T>,
}

impl<T: Scalar> FramePyramid<T> {
    pub fn levels(&self) -> [&Tensor<T>; 4] {
        [
            &self.f_half,
            &self.f_quarter,
            &self.f_eighth,
            &self.f_sixteenth,
        ]
    }
}

#[derive(Debug, Clone)]
struct Stage {
    down: Conv,
    bn1: BatchNorm,
    conv: Conv,
    bn2: BatchNorm,
}

impl Stage {
    fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        let y = self
            .bn1
            .forward(store, &self.down.forward(store, x)?, mode)?
            .relu()?;
        Ok(self
            .bn2
            .forward(store, &self.conv.forward(store, &y)?, mode)?
            .relu()?)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    stages: Vec<Stage>,
    reduce: Conv,
}

impl Encoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(4);
        let mut cin = 3;
        for (i, &cout) in cfg.channels.iter().enumerate() {
            let name = format!("encoder.stage{}", i + 1);
            // The last stage keeps its stride-2 entry, then widens the
            // receptive field with dilation instead of further striding.
            let dilation = if i == 3 { 2 } else { 1 };
            stages.push(Stage {
                down: Conv::new(
                    store,
                    rng,
                    &format!("{name}.down"),
                    cin,
                    cout,
                    3,
                    Conv2dParams::new(2, 1, 1),
                    false,
                )?,
                bn1: BatchNorm::new(store, &format!("{name}.bn1"), cout)?,
                conv: Conv::new(
                    store,
                    rng,
                    &format!("{name}.conv"),
                    cout,
                    cout,
                    3,
                    Conv2dParams::same(3, dilation),
                    false,
                )?,
                bn2: BatchNorm::new(store, &format!("{name}.bn2"), cout)?,
            });
            cin = cout;
        }
        let reduce = Conv::new(
            store,
            rng,
            "encoder.reduce",
            cfg.channels[3],
            cfg.hidden,
            1,
            Conv2dParams::default(),
            true,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            stages,
            reduce,
        })
    }

    pub fn extract_features<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        frame: &Tensor<T>,
        mode: Mode,
    ) -> Result<FramePyramid<T>> {
        let s = frame.shape();
        if s.len() != 3 || s[0] != 3 || s[1] == 0 || s[2] == 0 || s[1] % 16 != 0 || s[2] % 16 != 0 {
            return Err(Error::Dimension(format!(
                "encoder expects a 3×H×W frame with H, W multiples of 16, got {s:?}"
            )));
        }
        let mut levels = Vec::with_capacity(4);
        let mut x = frame.clone();
        for stage in &self.stages {
            x = stage.forward(store, &x, mode)?;
            levels.push(x.clone());
        }
        let mut it = levels.into_iter();
        let mut next = || it.next().expect("four stages");
        Ok(FramePyramid {
            f_half: next(),
            f_quarter: next(),
            f_eighth: next(),
            f_sixteenth: next(),
        })
    }

    /// 1×1 projection of the coarsest level to the transformer width.
    pub fn reduce_channels<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        f_sixteenth: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let c = self.cfg.channels[3];
        if f_sixteenth.ndim() != 3 || f_sixteenth.shape()[0] != c {
            return Err(Error::Dimension(format!(
                "reduce_channels expects {c} channels, got shape {:?}",
                f_sixteenth.shape()
            )));
        }
        self.reduce.forward(store, f_sixteenth)
    }
}
