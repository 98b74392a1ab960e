//! Independent reference implementations shared by the metric, loss and
//! acceptance tests.

use adamatte_core::metrics::Matte;

/// Gradient error from a full 2-D Gaussian-derivative kernel applied pixel by
/// pixel with replicated borders.
pub fn grad_oracle(pred: &Matte, gt: &Matte, sigma: f64) -> f64 {
    let r = (3.0 * sigma).ceil() as i64;
    let gauss = |x: i64| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp();
    // K_x(dy, dx) = G(dy)·G'(dx), scaled to unit L2 norm.
    let mut kx = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            kx.push(gauss(dy) * -(dx as f64) * gauss(dx));
        }
    }
    let norm = kx.iter().map(|v| v * v).sum::<f64>().sqrt();
    let k = |dy: i64, dx: i64| kx[((dy + r) * (2 * r + 1) + dx + r) as usize] / norm;
    let magnitude = |a: &Matte| -> Vec<f64> {
        let (h, w) = (a.height as i64, a.width as i64);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let (mut sx, mut sy) = (0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let v = a.at(
                            (y + dy).clamp(0, h - 1) as usize,
                            (x + dx).clamp(0, w - 1) as usize,
                        );
                        sx += k(dy, dx) * v;
                        sy += k(dx, dy) * v;
                    }
                }
                out.push((sx * sx + sy * sy).sqrt());
            }
        }
        out
    };
    let (a, b) = (magnitude(pred), magnitude(gt));
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
        * 1e3
}

/// Connectivity error recomputed per pixel: for each pixel and threshold a
/// fresh depth-first search from that pixel looks for the source region.
pub fn conn_oracle(pred: &Matte, gt: &Matte) -> Option<f64> {
    let (h, w) = (pred.height, pred.width);
    let n = h * w;
    let adjacent = |a: usize, b: usize| {
        let (ay, ax, by, bx) = (a / w, a % w, b / w, b % w);
        ay.abs_diff(by) + ax.abs_diff(bx) == 1
    };
    // Source: component labels by repeated min-propagation.
    let both: Vec<bool> = (0..n)
        .map(|i| pred.data[i] >= 0.9 && gt.data[i] >= 0.9)
        .collect();
    let mut label: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for a in 0..n {
            for b in 0..n {
                if both[a] && both[b] && adjacent(a, b) && label[b] < label[a] {
                    label[a] = label[b];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut best: Option<(usize, usize)> = None;
    for root in 0..n {
        if !both[root] || label[root] != root {
            continue;
        }
        let size = (0..n).filter(|&i| both[i] && label[i] == root).count();
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((root, size));
        }
    }
    let (root, _) = best?;
    let source: Vec<bool> = (0..n).map(|i| both[i] && label[i] == root).collect();

    let phi = |a: &Matte| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut level = 0.0;
                for k in 1..10 {
                    let theta = k as f64 / 10.0;
                    let mut stack = vec![i];
                    let mut seen = vec![false; n];
                    let mut hit = false;
                    while let Some(p) = stack.pop() {
                        if seen[p] || a.data[p] < theta {
                            continue;
                        }
                        seen[p] = true;
                        if source[p] {
                            hit = true;
                            break;
                        }
                        stack.extend((0..n).filter(|&q| adjacent(p, q)));
                    }
                    if hit {
                        level = theta;
                    }
                }
                let d = a.data[i] - level;
                if d >= 0.15 {
                    1.0 - d
                } else {
                    1.0
                }
            })
            .collect()
    };
    let (fp, fg) = (phi(pred), phi(gt));
    Some(fp.iter().zip(&fg).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64 * 1e3)
}

/// Scalar reference: binomial blur with clamped borders sampled at even
/// positions, and 2× upsampling as the 3/4–1/4 blend of the nearest inputs.
pub fn reference_pyramid(x: &[f64], n: usize, levels: usize) -> Vec<Vec<f64>> {
    let taps = [1.0, 4.0, 6.0, 4.0, 1.0];
    let mut bands = Vec::new();
    let mut g = x.to_vec();
    let mut size = n;
    for _ in 1..levels {
        let half = size / 2;
        let at = |y: i64, x: i64| {
            g[y.clamp(0, size as i64 - 1) as usize * size + x.clamp(0, size as i64 - 1) as usize]
        };
        let mut next = vec![0.0; half * half];
        for y in 0..half {
            for x in 0..half {
                let mut s = 0.0;
                for (i, a) in taps.iter().enumerate() {
                    for (j, b) in taps.iter().enumerate() {
                        s += a * b / 256.0
                            * at(2 * y as i64 + i as i64 - 2, 2 * x as i64 + j as i64 - 2);
                    }
                }
                next[y * half + x] = s;
            }
        }
        let up1 = |k: usize| -> (usize, usize) {
            let base = k / 2;
            let other = if k % 2 == 0 {
                base.saturating_sub(1)
            } else {
                (base + 1).min(half - 1)
            };
            (base, other)
        };
        let mut band = vec![0.0; size * size];
        for y in 0..size {
            for x in 0..size {
                let (y0, y1) = up1(y);
                let (x0, x1) = up1(x);
                let v = |yy: usize, xx: usize| next[yy * half + xx];
                let up = 0.75 * (0.75 * v(y0, x0) + 0.25 * v(y0, x1))
                    + 0.25 * (0.75 * v(y1, x0) + 0.25 * v(y1, x1));
                band[y * size + x] = g[y * size + x] - up;
            }
        }
        bands.push(band);
        g = next;
        size = half;
    }
    bands.push(g);
    bands
}
