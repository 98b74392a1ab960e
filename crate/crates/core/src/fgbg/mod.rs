//! Fg/Bg structuring transformer: projections, Fg/Bg value embedding, the
//! bounded key/value memory and the long/short-term attention over it.

mod attention;
mod embed;
mod memory;
mod transformer;

pub use attention::{
    fuse, long_term_attention, short_term_attention, window_mask, windowed_attention,
};
pub use embed::embed_fgbg;
pub use memory::{KeyValue, MemoryBank, MemoryEntry};
pub use transformer::{
    project_qkv, Context, FgBgTransformer, MemoryRead, Qkv, QkvWeights, TransformerLayer,
    TransformerOutput,
};

use adamatte_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// `C×h×w` feature map to a `(h·w)×C` token matrix.
pub fn to_tokens<T: Scalar>(z: &Tensor<T>) -> Result<Tensor<T>> {
    if z.ndim() != 3 {
        return Err(Error::Dimension(format!(
            "expected C×h×w, got {:?}",
            z.shape()
        )));
    }
    let (c, p) = (z.shape()[0], z.shape()[1] * z.shape()[2]);
    Ok(z.reshape(&[c, p])?.transpose()?)
}

/// Inverse of [`to_tokens`].
pub fn from_tokens<T: Scalar>(tokens: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    if tokens.ndim() != 2 || tokens.shape()[0] != h * w {
        return Err(Error::Dimension(format!(
            "{:?} tokens do not tile a {h}×{w} grid",
            tokens.shape()
        )));
    }
    let c = tokens.shape()[1];
    Ok(tokens.transpose()?.reshape(&[c, h, w])?)
}
