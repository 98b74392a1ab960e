use crate::error::{dim_err, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Geometry of a square-kernel 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride,
            padding,
            dilation,
        }
    }

    /// "Same" padding for an odd kernel at stride 1.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self::new(1, dilation * (kernel - 1) / 2, dilation)
    }

    /// Output extent along one axis, or `None` when it would be < 1.
    pub fn output_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    p: Conv2dParams,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Visits `(col_row, col_col, input_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let Conv2dParams {
            stride,
            padding,
            dilation,
        } = self.p;
        for ch in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ch * self.k + ky) * self.k + kx;
                    for oy in 0..self.oh {
                        let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = (ch * self.h + iy as usize) * self.w;
                        for ox in 0..self.ow {
                            let ix = (ox * stride + kx * dilation) as isize - padding as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(row, oy * self.ow + ox, base + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let cols = self.cols();
        let mut col = vec![T::zero(); self.rows() * cols];
        self.for_each_tap(|r, c, i| col[r * cols + c] = x[i]);
        col
    }

    fn col2im<T: Scalar>(&self, col: &[T]) -> Vec<T> {
        let cols = self.cols();
        let mut x = vec![T::zero(); self.c * self.h * self.w];
        self.for_each_tap(|r, c, i| x[i] += col[r * cols + c]);
        x
    }
}

impl<T: Scalar> Tensor<T> {
    /// Cross-correlation of a `C_in×H×W` input with a `C_out×C_in×k×k` kernel,
    /// plus an optional per-output-channel bias of length `C_out`.
    pub fn conv2d(&self, weight: &Self, bias: Option<&Self>, params: Conv2dParams) -> Result<Self> {
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] {
            return dim_err("conv2d", format!("input {xs:?} with kernel {ws:?}"));
        }
        let k = ws[2];
        if k % 2 == 0 {
            return dim_err("conv2d", format!("kernel size {k} must be odd"));
        }
        if params.dilation == 0 {
            return dim_err("conv2d", "dilation must be >= 1");
        }
        let (Some(oh), Some(ow)) = (params.output_len(xs[1], k), params.output_len(xs[2], k))
        else {
            return dim_err(
                "conv2d",
                format!("non-positive output extent for {xs:?} and {params:?}"),
            );
        };
        let c_out = ws[0];
        if let Some(b) = bias {
            if b.numel() != c_out {
                return dim_err(
                    "conv2d",
                    format!("bias {:?} for {c_out} channels", b.shape()),
                );
            }
        }
        let geo = Geometry {
            c: xs[0],
            h: xs[1],
            w: xs[2],
            k,
            oh,
            ow,
            p: params,
        };
        let (rows, cols) = (geo.rows(), geo.cols());
        let col = geo.im2col(self.data());
        let mut out = vec![T::zero(); c_out * cols];
        gemm(
            false,
            false,
            c_out,
            rows,
            cols,
            weight.data(),
            &col,
            &mut out,
            false,
        );
        if let Some(b) = bias {
            for (chunk, &bv) in out.chunks_mut(cols).zip(b.data()) {
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }

        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        let flags: Vec<bool> = inputs.iter().map(Tensor::requires_grad).collect();
        let w = weight.clone();
        Tensor::from_op("conv2d", vec![c_out, oh, ow], out, inputs, move |g, _| {
            let gx = flags[0].then(|| {
                let mut gcol = vec![T::zero(); rows * cols];
                gemm(
                    true,
                    false,
                    rows,
                    c_out,
                    cols,
                    w.data(),
                    g,
                    &mut gcol,
                    false,
                );
                geo.col2im(&gcol)
            });
            let gw = flags[1].then(|| {
                let mut gw = vec![T::zero(); c_out * rows];
                gemm(false, true, c_out, cols, rows, g, &col, &mut gw, false);
                gw
            });
            let mut grads = vec![gx, gw];
            if flags.len() == 3 {
                grads.push(
                    flags[2].then(|| g.chunks(cols).map(|c| c.iter().copied().sum()).collect()),
                );
            }
            grads
        })
    }
}
