use adamatte_tensor::{AttentionMask, Scalar, Tensor};

use super::memory::{MemoryBank, MemoryEntry};
use crate::error::{Error, Result};

fn gather<'a, T: Scalar>(
    entries: impl Iterator<Item = &'a MemoryEntry<T>>,
    layer: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (keys, values): (Vec<&Tensor<T>>, Vec<&Tensor<T>>) = entries
        .map(|e| {
            let kv = e
                .layers
                .get(layer)
                .ok_or_else(|| Error::State(format!("memory entry has no layer {layer}")))?;
            Ok((&kv.key, &kv.value))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((Tensor::concat(&keys, 0)?, Tensor::concat(&values, 0)?))
}

/// Dense attention from every query token to every token of every stored
/// long-term entry of `layer`.
pub fn long_term_attention<T: Scalar>(
    q: &Tensor<T>,
    bank: &MemoryBank<T>,
    layer: usize,
    heads: usize,
) -> Result<Tensor<T>> {
    if bank.long().is_empty() {
        return Err(Error::State("long-term memory is empty".into()));
    }
    let (k, v) = gather(bank.long().iter(), layer)?;
    Ok(Tensor::attention(q, &k, &v, heads, None)?)
}

/// Which of `entries` stacked `h×w` key grids each query may see: the
/// `omega×omega` window centred on the query's own position, with cells
/// falling outside the map excluded rather than padded.
pub fn window_mask(h: usize, w: usize, entries: usize, omega: usize) -> Result<AttentionMask> {
    if omega % 2 == 0 {
        return Err(Error::Config(format!("window size {omega} must be odd")));
    }
    let r = omega / 2;
    let p = h * w;
    Ok(AttentionMask::from_fn(p, p * entries, |i, j| {
        let (qy, qx) = (i / w, i % w);
        let cell = j % p;
        let (ky, kx) = (cell / w, cell % w);
        qy.abs_diff(ky) <= r && qx.abs_diff(kx) <= r
    }))
}

/// Attention restricted to the spatial `omega` window in each of the last
/// `s` short-term entries of `layer`.
pub fn short_term_attention<T: Scalar>(
    q: &Tensor<T>,
    bank: &MemoryBank<T>,
    layer: usize,
    heads: usize,
    omega: usize,
    s: usize,
) -> Result<Tensor<T>> {
    if omega % 2 == 0 {
        return Err(Error::Config(format!("window size {omega} must be odd")));
    }
    let short = bank.short();
    if short.is_empty() || s == 0 {
        return Err(Error::State("short-term memory is empty".into()));
    }
    let grid = bank.grid().expect("non-empty bank has a grid");
    let used = s.min(short.len());
    let (k, v) = gather(short.iter().skip(short.len() - used), layer)?;
    windowed_attention(q, &k, &v, heads, grid, omega)
}

/// Attention of `h·w` query tokens to keys/values made of whole `h×w`
/// grids stacked along rows, restricted to the `omega` window.
pub fn windowed_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    grid: (usize, usize),
    omega: usize,
) -> Result<Tensor<T>> {
    let (h, w) = grid;
    let p = h * w;
    if q.ndim() != 2 || q.shape()[0] != p || k.ndim() != 2 || k.shape()[0] % p != 0 {
        return Err(Error::Dimension(format!(
            "queries {:?} and keys {:?} do not tile the {h}×{w} grid",
            q.shape(),
            k.shape()
        )));
    }
    let mask = window_mask(h, w, k.shape()[0] / p, omega)?;
    Ok(Tensor::attention(q, k, v, heads, Some(&mask))?)
}

/// Sum of the long- and short-term outputs.
pub fn fuse<T: Scalar>(zl: &Tensor<T>, zs: &Tensor<T>) -> Result<Tensor<T>> {
    if zl.shape() != zs.shape() {
        return Err(Error::Dimension(format!(
            "cannot fuse {:?} with {:?}",
            zl.shape(),
            zs.shape()
        )));
    }
    Ok(zl.add(zs)?)
}
