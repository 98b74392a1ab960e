use adamatte_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// `v + m·e_f + (1 − m)·e_b` per token; `v` is `P×C`, `mask` holds `P`
/// values in `[0, 1]` (any shape), `e_f`/`e_b` hold `C` values.
pub fn embed_fgbg<T: Scalar>(
    v: &Tensor<T>,
    mask: &Tensor<T>,
    e_f: &Tensor<T>,
    e_b: &Tensor<T>,
) -> Result<Tensor<T>> {
    if v.ndim() != 2 {
        return Err(Error::Dimension(format!(
            "values must be P×C, got {:?}",
            v.shape()
        )));
    }
    let (p, c) = (v.shape()[0], v.shape()[1]);
    if mask.numel() != p || e_f.numel() != c || e_b.numel() != c {
        return Err(Error::Dimension(format!(
            "values {:?}, mask {:?}, embeddings {:?}/{:?}",
            v.shape(),
            mask.shape(),
            e_f.shape(),
            e_b.shape()
        )));
    }
    let tol = T::of(1e-6);
    if mask.data().iter().any(|&m| m < -tol || m > T::one() + tol) {
        return Err(Error::Contract(
            "Fg/Bg mask values must lie in [0, 1]".into(),
        ));
    }
    let m = mask.reshape(&[p, 1])?;
    let fg = m.matmul(&e_f.reshape(&[1, c])?)?;
    let bg = m.one_minus()?.matmul(&e_b.reshape(&[1, c])?)?;
    Ok(v.add(&fg.add(&bg)?)?)
}
