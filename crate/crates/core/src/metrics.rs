//! Matting error metrics over `f64` mattes.
//!
//! MAD, MSE, Grad and Conn are reported ×1e3 and dtSSD ×1e2; the unscaled
//! values are kept alongside in [`MetricReport::raw`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPATIAL_SCALE: f64 = 1e3;
pub const TEMPORAL_SCALE: f64 = 1e2;
pub const GRAD_SIGMA: f64 = 1.4;
/// Connectivity threshold grid step and the opacity defining the source region.
pub const CONN_STEP: f64 = 0.1;
pub const CONN_SOURCE: f64 = 0.9;

/// One alpha matte, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matte {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Matte {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {height}×{width} matte",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Self {
            height,
            width,
            data: vec![v; height * width],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

fn check_pair(a: &Matte, b: &Matte) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::Dimension(format!(
            "matte {}×{} vs {}×{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

fn check_seq(pred: &[Matte], gt: &[Matte]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Dimension(format!(
            "sequences of {} and {} frames",
            pred.len(),
            gt.len()
        )));
    }
    pred.iter().zip(gt).try_for_each(|(p, g)| check_pair(p, g))
}

fn pixel_mean(pred: &[Matte], gt: &[Matte], f: impl Fn(f64) -> f64) -> Result<f64> {
    check_seq(pred, gt)?;
    let n: usize = pred.iter().map(|m| m.data.len()).sum();
    let s: f64 = pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| p.data.iter().zip(&g.data))
        .map(|(a, b)| f(a - b))
        .sum();
    Ok(s / n as f64)
}

/// Unscaled mean absolute difference over all pixels of all frames.
pub fn mad_raw(pred: &[Matte], gt: &[Matte]) -> Result<f64> {
    pixel_mean(pred, gt, f64::abs)
}

pub fn mse_raw(pred: &[Matte], gt: &[Matte]) -> Result<f64> {
    pixel_mean(pred, gt, |d| d * d)
}

pub fn mad(pred: &[Matte], gt: &[Matte]) -> Result<f64> {
    Ok(mad_raw(pred, gt)? * SPATIAL_SCALE)
}

pub fn mse(pred: &[Matte], gt: &[Matte]) -> Result<f64> {
    Ok(mse_raw(pred, gt)? * SPATIAL_SCALE)
}

/// Sampled Gaussian and its first derivative on `[-r, r]`, `r = ceil(3σ)`,
/// each scaled so that their outer product has unit L2 norm.
pub fn gaussian_derivative_taps(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let r = (3.0 * sigma).ceil() as i64;
    let g: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let d: Vec<f64> = (-r..=r)
        .zip(&g)
        .map(|(x, &gv)| -(x as f64) / (sigma * sigma) * gv)
        .collect();
    let ng = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nd = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    (
        g.iter().map(|v| v / ng).collect(),
        d.iter().map(|v| v / nd).collect(),
    )
}

fn filter_rows(m: &Matte, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as i64;
    let (h, w) = (m.height, m.width as i64);
    let mut out = vec![0.0; m.data.len()];
    for y in 0..h {
        let row = &m.data[y * m.width..(y + 1) * m.width];
        for x in 0..w {
            out[y * m.width + x as usize] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * row[(x + i as i64 - r).clamp(0, w - 1) as usize])
                .sum();
        }
    }
    out
}

fn filter_cols(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as i64;
    let mut out = vec![0.0; data.len()];
    for y in 0..h as i64 {
        for x in 0..w {
            out[y as usize * w + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * data[(y + i as i64 - r).clamp(0, h as i64 - 1) as usize * w + x])
                .sum();
        }
    }
    out
}

/// Gradient magnitude from separable Gaussian-derivative filtering with
/// replicated borders.
pub fn gradient_magnitude(m: &Matte, sigma: f64) -> Vec<f64> {
    let (g, d) = gaussian_derivative_taps(sigma);
    let gx = filter_cols(&filter_rows(m, &d), m.height, m.width, &g);
    let gy = filter_cols(&filter_rows(m, &g), m.height, m.width, &d);
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect()
}

/// Per-frame mean of `(|∇pred| − |∇gt|)²`, averaged over frames; unscaled.
pub fn grad_error_raw(pred: &[Matte], gt: &[Matte]) -> Result<f64> {
    check_seq(pred, gt)?;
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let gp = gradient_magnitude(p, GRAD_SIGMA);
            let gg = gradient_magnitude(g, GRAD_SIGMA);
            gp.iter()
                .zip(&gg)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / gp.len() as f64
        })
        .sum();
    Ok(total / pred.len() as f64)
}

pub fn grad_error(pred: &[Matte], gt: &[Matte]) -> Result<f64> {
    Ok(grad_error_raw(pred, gt)? * SPATIAL_SCALE)
}

const NEIGHBOURS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn neighbours(i: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y, x) = ((i / w) as i64, (i % w) as i64);
    NEIGHBOURS.iter().filter_map(move |&(dy, dx)| {
        let (ny, nx) = (y + dy, x + dx);
        (ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64)
            .then(|| ny as usize * w + nx as usize)
    })
}

/// Largest 4-connected component of `inside`; ties go to the component
/// reached first in raster order.
pub fn largest_component(inside: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; inside.len()];
    let mut best: Option<(usize, usize)> = None;
    let mut queue = VecDeque::new();
    let mut next = 0;
    for start in 0..inside.len() {
        if !inside[start] || label[start] != usize::MAX {
            continue;
        }
        let mut size = 0;
        label[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            for n in neighbours(i, h, w) {
                if inside[n] && label[n] == usize::MAX {
                    label[n] = next;
                    queue.push_back(n);
                }
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((next, size));
        }
        next += 1;
    }
    match best {
        Some((id, _)) => label.iter().map(|&l| l == id).collect(),
        None => vec![false; inside.len()],
    }
}

/// Connectivity thresholds `1/n, 2/n, .., (n-1)/n` for step `1/n`.
pub fn conn_thresholds(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (1..n).map(|k| k as f64 / n as f64).collect()
}

/// Connectivity degree of every pixel of `m` relative to `source`.
pub fn connectivity_degree(m: &Matte, source: &[bool], step: f64) -> Vec<f64> {
    let (h, w) = (m.height, m.width);
    let mut level = vec![0.0; m.data.len()];
    let mut seen = vec![false; m.data.len()];
    let mut queue = VecDeque::new();
    for theta in conn_thresholds(step) {
        seen.iter_mut().for_each(|s| *s = false);
        for (i, &s) in source.iter().enumerate() {
            if s && m.data[i] >= theta {
                seen[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            level[i] = theta;
            for n in neighbours(i, h, w) {
                if !seen[n] && m.data[n] >= theta {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    m.data
        .iter()
        .zip(&level)
        .map(|(&a, &l)| {
            let d = a - l;
            if d >= 0.15 {
                1.0 - d
            } else {
                1.0
            }
        })
        .collect()
}

/// Unscaled connectivity error of one frame; `None` when no pixel is at
/// least [`CONN_SOURCE`] in both mattes.
pub fn conn_error_raw(pred: &Matte, gt: &Matte, step: f64) -> Result<Option<f64>> {
    check_pair(pred, gt)?;
    let both: Vec<bool> = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&p, &g)| p >= CONN_SOURCE && g >= CONN_SOURCE)
        .collect();
    let source = largest_component(&both, pred.height, pred.width);
    if !source.iter().any(|&s| s) {
        return Ok(None);
    }
    let fp = connectivity_degree(pred, &source, step);
    let fg = connectivity_degree(gt, &source, step);
    let s: f64 = fp.iter().zip(&fg).map(|(a, b)| (a - b).abs()).sum();
    Ok(Some(s / fp.len() as f64))
}

pub fn conn_error(pred: &Matte, gt: &Matte, step: f64) -> Result<Option<f64>> {
    Ok(conn_error_raw(pred, gt, step)?.map(|v| v * SPATIAL_SCALE))
}

/// Mean over frames of the per-frame connectivity error, skipping frames
/// where it is undefined.
pub fn conn_error_seq_raw(pred: &[Matte], gt: &[Matte]) -> Result<Option<f64>> {
    check_seq(pred, gt)?;
    let defined: Vec<f64> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| conn_error_raw(p, g, CONN_STEP))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok((!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64))
}

/// Unscaled dtSSD; `None` for fewer than two frames.
pub fn dtssd_raw(pred: &[Matte], gt: &[Matte]) -> Result<Option<f64>> {
    check_seq(pred, gt)?;
    if pred.len() < 2 {
        return Ok(None);
    }
    let total: f64 = (1..pred.len())
        .map(|t| {
            let n = pred[t].data.len() as f64;
            let ss: f64 = (0..pred[t].data.len())
                .map(|i| {
                    let dp = pred[t].data[i] - pred[t - 1].data[i];
                    let dg = gt[t].data[i] - gt[t - 1].data[i];
                    (dp - dg) * (dp - dg)
                })
                .sum();
            (ss / n).sqrt()
        })
        .sum();
    Ok(Some(total / (pred.len() - 1) as f64))
}

pub fn dtssd(pred: &[Matte], gt: &[Matte]) -> Result<Option<f64>> {
    Ok(dtssd_raw(pred, gt)?.map(|v| v * TEMPORAL_SCALE))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub mad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: Option<f64>,
    pub dtssd: Option<f64>,
}

/// Scaled metrics with the unscaled values alongside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: Option<f64>,
    pub dtssd: Option<f64>,
    pub raw: MetricValues,
}

impl MetricReport {
    /// All metrics of one sequence; Conn only when `with_conn`.
    pub fn compute(pred: &[Matte], gt: &[Matte], with_conn: bool) -> Result<Self> {
        let raw = MetricValues {
            mad: mad_raw(pred, gt)?,
            mse: mse_raw(pred, gt)?,
            grad: grad_error_raw(pred, gt)?,
            conn: if with_conn {
                conn_error_seq_raw(pred, gt)?
            } else {
                None
            },
            dtssd: dtssd_raw(pred, gt)?,
        };
        Ok(Self::from_raw(raw))
    }

    pub fn from_raw(raw: MetricValues) -> Self {
        Self {
            mad: raw.mad * SPATIAL_SCALE,
            mse: raw.mse * SPATIAL_SCALE,
            grad: raw.grad * SPATIAL_SCALE,
            conn: raw.conn.map(|v| v * SPATIAL_SCALE),
            dtssd: raw.dtssd.map(|v| v * TEMPORAL_SCALE),
            raw,
        }
    }

    /// Unweighted mean over sequences; optional metrics average the
    /// sequences where they are defined.
    pub fn aggregate(reports: &[MetricReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let opt = |f: fn(&MetricValues) -> Option<f64>| {
            let v: Vec<f64> = reports.iter().filter_map(|r| f(&r.raw)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Some(Self::from_raw(MetricValues {
            mad: reports.iter().map(|r| r.raw.mad).sum::<f64>() / n,
            mse: reports.iter().map(|r| r.raw.mse).sum::<f64>() / n,
            grad: reports.iter().map(|r| r.raw.grad).sum::<f64>() / n,
            conn: opt(|v| v.conn),
            dtssd: opt(|v| v.dtssd),
        }))
    }
}
