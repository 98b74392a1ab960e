#![allow(dead_code)]

pub mod model_grad;
pub mod oracles;

use adamatte_core::fgbg::{KeyValue, MemoryBank};
use adamatte_core::{AdaMatte, MemoryConfig, ModelConfig};
use adamatte_tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

pub fn uniform01(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

pub fn set_param<T: Scalar>(model: &mut AdaMatte<T>, name: &str, f: impl Fn(usize) -> f64) {
    let i = model
        .store
        .find(name)
        .unwrap_or_else(|| panic!("no parameter {name}"));
    let n = model.store.params()[i].tensor.numel();
    model
        .store
        .set_param_data(i, (0..n).map(|j| T::of(f(j))).collect())
        .unwrap();
}

/// A small model: hidden 16, 2 heads.
pub fn small_config() -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.encoder.channels = [4, 6, 8, 12];
    cfg.encoder.hidden = 8;
    cfg.transformer.heads = 2;
    cfg.transformer.mlp_ratio = 2;
    cfg.decoder.widths = [8, 6, 6, 4];
    cfg
}

/// A bank of `frames` entries of random `h·w × c` keys/values, one layer.
pub fn random_bank(
    rng: &mut ChaCha8Rng,
    cfg: MemoryConfig,
    frames: usize,
    grid: (usize, usize),
    c: usize,
) -> MemoryBank<f64> {
    let mut bank = MemoryBank::new(cfg);
    for t in 0..frames {
        let p = grid.0 * grid.1;
        let kv = KeyValue {
            key: random(rng, &[p, c], 1.5),
            value: random(rng, &[p, c], 1.0),
        };
        bank.write(t, grid, vec![kv]).unwrap();
    }
    bank
}

/// Softmax attention computed one query and head at a time over an explicit
/// list of visible `(key row)` indices.
pub fn brute_attention(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    v: &Tensor<f64>,
    heads: usize,
    visible: impl Fn(usize) -> Vec<usize>,
) -> Vec<f64> {
    let (p, c) = (q.shape()[0], q.shape()[1]);
    let dh = c / heads;
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut out = vec![0.0; p * c];
    for i in 0..p {
        let keys = visible(i);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let logits: Vec<f64> = keys
                .iter()
                .map(|&j| {
                    cols.clone()
                        .map(|col| qd[i * c + col] * kd[j * c + col])
                        .sum::<f64>()
                        / (dh as f64).sqrt()
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = weights.iter().sum();
            for col in cols.clone() {
                out[i * c + col] = keys
                    .iter()
                    .zip(&weights)
                    .map(|(&j, w)| w / z * vd[j * c + col])
                    .sum();
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Positions `(row-major)` of a `h×w` grid inside the `omega` window
/// around query `i`, enumerated by window offset.
pub fn window_positions(i: usize, h: usize, w: usize, omega: usize) -> Vec<usize> {
    let r = (omega / 2) as i64;
    let (y, x) = ((i / w) as i64, (i % w) as i64);
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let (yy, xx) = (y + dy, x + dx);
            if yy >= 0 && xx >= 0 && yy < h as i64 && xx < w as i64 {
                out.push(yy as usize * w + xx as usize);
            }
        }
    }
    out
}

/// Concatenated keys and values of `entries` for layer 0.
pub fn stacked(entries: &[&adamatte_core::fgbg::MemoryEntry<f64>]) -> (Tensor<f64>, Tensor<f64>) {
    let k: Vec<&Tensor<f64>> = entries.iter().map(|e| &e.layers[0].key).collect();
    let v: Vec<&Tensor<f64>> = entries.iter().map(|e| &e.layers[0].value).collect();
    (
        Tensor::concat(&k, 0).unwrap(),
        Tensor::concat(&v, 0).unwrap(),
    )
}

/// A 3×H×W frame with smooth random content in [0, 1].
pub fn frame<T: Scalar>(seed: u64, h: usize, w: usize) -> Tensor<T> {
    let mut r = rng(seed);
    let (a, b, c) = (
        r.gen_range(0.1..0.5),
        r.gen_range(0.1..0.5),
        r.gen_range(0.0..6.0),
    );
    let data = (0..3 * h * w)
        .map(|i| {
            let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
            T::of(0.5 + 0.4 * ((a * y as f64 + b * x as f64 + c + ch as f64).sin()))
        })
        .collect();
    Tensor::from_vec(&[3, h, w], data).unwrap()
}
