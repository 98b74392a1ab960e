use crate::error::{dim_err, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

impl<T: Scalar> Tensor<T> {
    /// `[M×K] @ [K×N] -> [M×N]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape()[1] != other.shape()[0] {
            return dim_err(
                "matmul",
                format!("{:?} @ {:?}", self.shape(), other.shape()),
            );
        }
        let (m, k, n) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            false,
            false,
            m,
            k,
            n,
            self.data(),
            other.data(),
            &mut out,
            false,
        );
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            move |g, _| {
                // dA = G @ B^T, dB = A^T @ G
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(false, true, m, n, k, g, b.data(), &mut ga, false);
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(true, false, k, m, n, a.data(), g, &mut gb, false);
                    gb
                });
                vec![ga, gb]
            },
        )
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Self> {
        if self.ndim() != 2 {
            return dim_err("transpose", format!("expected 2-D, got {:?}", self.shape()));
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let data = transpose_buf(self.data(), r, c);
        Tensor::from_op(
            "transpose",
            vec![c, r],
            data,
            vec![self.clone()],
            move |g, _| vec![Some(transpose_buf(g, c, r))],
        )
    }
}

fn transpose_buf<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = src[i * cols + j];
        }
    }
    out
}
