use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// `(outer, axis_len, inner)` view of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tensor<T> {
    /// Same data, new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return dim_err("reshape", format!("{:?} -> {:?}", self.shape(), shape));
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            |g, _| vec![Some(g.to_vec())],
        )
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let Some(first) = parts.first() else {
            return dim_err("concat", "no inputs");
        };
        let nd = first.ndim();
        if axis >= nd {
            return dim_err("concat", format!("axis {axis} out of range for {nd}-D"));
        }
        for p in parts {
            let ok =
                p.ndim() == nd && (0..nd).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !ok {
                return dim_err(
                    "concat",
                    format!(
                        "{:?} incompatible with {:?} on axis {axis}",
                        p.shape(),
                        first.shape()
                    ),
                );
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                let block = len * inner;
                data.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
            }
        }
        let flags: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
        Tensor::from_op(
            "concat",
            shape,
            data,
            parts.iter().map(|&p| p.clone()).collect(),
            move |g, _| {
                let mut out: Vec<Option<Vec<T>>> = flags
                    .iter()
                    .zip(&lens)
                    .map(|(&f, &len)| f.then(|| Vec::with_capacity(outer * len * inner)))
                    .collect();
                let row = total * inner;
                for o in 0..outer {
                    let mut off = o * row;
                    for (slot, &len) in out.iter_mut().zip(&lens) {
                        let block = len * inner;
                        if let Some(buf) = slot {
                            buf.extend_from_slice(&g[off..off + block]);
                        }
                        off += block;
                    }
                }
                out
            },
        )
    }

    /// The sub-tensor `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.ndim() || start + len > self.shape()[axis] || len == 0 {
            return dim_err(
                "narrow",
                format!("{start}+{len} on axis {axis} of {:?}", self.shape()),
            );
        }
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let total = self.numel();
        Tensor::from_op("narrow", shape, data, vec![self.clone()], move |g, _| {
            let mut gx = vec![T::zero(); total];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                gx[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        })
    }

    /// Splits into consecutive pieces of the given sizes along `axis`.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Self>> {
        if axis >= self.ndim() || sizes.iter().sum::<usize>() != self.shape()[axis] {
            return dim_err(
                "split",
                format!("sizes {sizes:?} on axis {axis} of {:?}", self.shape()),
            );
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let part = self.narrow(axis, start, len);
                start += len;
                part
            })
            .collect()
    }

    /// Edge-replicating padding of a `C×H×W` tensor by `pad` on every side.
    pub fn pad_replicate(&self, pad: usize) -> Result<Self> {
        if self.ndim() != 3 {
            return dim_err(
                "pad_replicate",
                format!("expected C×H×W, got {:?}", self.shape()),
            );
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (ho, wo) = (h + 2 * pad, w + 2 * pad);
        let src = move |i: usize, n: usize| i.saturating_sub(pad).min(n - 1);
        let mut data = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for y in 0..ho {
                let sy = src(y, h);
                for x in 0..wo {
                    data.push(self.data()[(ch * h + sy) * w + src(x, w)]);
                }
            }
        }
        Tensor::from_op(
            "pad_replicate",
            vec![c, ho, wo],
            data,
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..ho {
                        let sy = src(y, h);
                        for x in 0..wo {
                            gx[(ch * h + sy) * w + src(x, w)] += g[(ch * ho + y) * wo + x];
                        }
                    }
                }
                vec![Some(gx)]
            },
        )
    }
}
