use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Interpolation taps `(i0, i1, w0, w1)` for each output index, half-pixel centers.
fn taps<T: Scalar>(input: usize, output: usize) -> Vec<(usize, usize, T, T)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = (src - i0 as f64).clamp(0.0, 1.0);
            (i0, i1, T::of(1.0 - frac), T::of(frac))
        })
        .collect()
}

impl<T: Scalar> Tensor<T> {
    /// Bilinear resize of a `C×H×W` tensor (align-corners = false).
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Self> {
        if self.ndim() != 3 || out_h == 0 || out_w == 0 {
            return dim_err(
                "bilinear_resize",
                format!("{:?} -> {out_h}×{out_w}", self.shape()),
            );
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        if (h, w) == (out_h, out_w) {
            return self.reshape(self.shape());
        }
        let ty = taps::<T>(h, out_h);
        let tx = taps::<T>(w, out_w);
        let x = self.data();
        let mut out = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            for &(y0, y1, wy0, wy1) in &ty {
                for &(x0, x1, wx0, wx1) in &tx {
                    let top = plane[y0 * w + x0] * wx0 + plane[y0 * w + x1] * wx1;
                    let bot = plane[y1 * w + x0] * wx0 + plane[y1 * w + x1] * wx1;
                    out.push(top * wy0 + bot * wy1);
                }
            }
        }
        Tensor::from_op(
            "bilinear_resize",
            vec![c, out_h, out_w],
            out,
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![T::zero(); c * h * w];
                let mut gi = g.iter();
                for ch in 0..c {
                    let plane = &mut gx[ch * h * w..(ch + 1) * h * w];
                    for &(y0, y1, wy0, wy1) in &ty {
                        for &(x0, x1, wx0, wx1) in &tx {
                            let v = *gi.next().expect("gradient length");
                            plane[y0 * w + x0] += v * wy0 * wx0;
                            plane[y0 * w + x1] += v * wy0 * wx1;
                            plane[y1 * w + x0] += v * wy1 * wx0;
                            plane[y1 * w + x1] += v * wy1 * wx1;
                        }
                    }
                }
                vec![Some(gx)]
            },
        )
    }

    /// Area-average downsample of a `C×H×W` tensor by an integer factor.
    pub fn avg_pool(&self, factor: usize) -> Result<Self> {
        if self.ndim() != 3
            || factor == 0
            || self.shape()[1] % factor != 0
            || self.shape()[2] % factor != 0
        {
            return dim_err("avg_pool", format!("{:?} by factor {factor}", self.shape()));
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (oh, ow) = (h / factor, w / factor);
        let inv = T::one() / T::of((factor * factor) as f64);
        let x = self.data();
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(ch * oh + y / factor) * ow + xx / factor] += x[(ch * h + y) * w + xx];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        Tensor::from_op(
            "avg_pool",
            vec![c, oh, ow],
            out,
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[(ch * h + y) * w + xx] =
                                g[(ch * oh + y / factor) * ow + xx / factor] * inv;
                        }
                    }
                }
                vec![Some(gx)]
            },
        )
    }
}
