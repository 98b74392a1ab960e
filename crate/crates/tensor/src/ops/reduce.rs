use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tensor<T> {
    /// Sum of all elements as a 0-d tensor.
    pub fn sum(&self) -> Result<Self> {
        let s: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            Vec::new(),
            vec![s],
            vec![self.clone()],
            move |g, _| vec![Some(vec![g[0]; n])],
        )
    }

    /// Mean of all elements as a 0-d tensor.
    pub fn mean(&self) -> Result<Self> {
        let n = self.numel();
        let inv = T::one() / T::of(n as f64);
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(
            "mean",
            Vec::new(),
            vec![s * inv],
            vec![self.clone()],
            move |g, _| vec![Some(vec![g[0] * inv; n])],
        )
    }
}
