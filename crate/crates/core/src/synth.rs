//! Deterministic synthetic matting sequences: soft-edged sprites with an
//! analytic alpha composited over a moving procedural background.

use std::f64::consts::PI;

use adamatte_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SceneMode {
    /// Only the foreground moves.
    StaticBg,
    #[default]
    DynamicBg,
}

/// Per-frame similarity motion about the image centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Motion {
    /// Translation in pixels per frame.
    pub tx: f64,
    pub ty: f64,
    /// Rotation in degrees per frame.
    pub rot_deg: f64,
    /// Relative scale change per frame.
    pub zoom: f64,
}

impl Motion {
    pub const IDENTITY: Motion = Motion {
        tx: 0.0,
        ty: 0.0,
        rot_deg: 0.0,
        zoom: 0.0,
    };

    /// Maps an output position to the source position after `t` frames.
    fn inverse(&self, t: f64, cy: f64, cx: f64, y: f64, x: f64) -> (f64, f64) {
        let s = (1.0 + self.zoom).powf(t);
        let a = -(self.rot_deg * t).to_radians();
        let (dy, dx) = (y - cy - self.ty * t, x - cx - self.tx * t);
        let (ry, rx) = (a.sin() * dx + a.cos() * dy, a.cos() * dx - a.sin() * dy);
        (cy + ry / s, cx + rx / s)
    }

    fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Disk,
    /// Segment of the given half length and orientation, swept by the radius.
    Capsule {
        half_length: f64,
        angle_deg: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub shape: Shape,
    /// Centre `(y, x)` at frame 0, pixels.
    pub center: (f64, f64),
    /// Drift `(vy, vx)` in pixels per frame.
    pub velocity: (f64, f64),
    /// Sinusoidal wobble amplitude `(y, x)` in pixels and its angular rate.
    pub wobble: (f64, f64),
    pub wobble_rate: f64,
    pub radius: f64,
    /// Edge softness: alpha ramps over `±1.5·softness` around the boundary.
    pub softness: f64,
}

impl Sprite {
    fn center_at(&self, t: f64) -> (f64, f64) {
        let w = (self.wobble_rate * t).sin();
        (
            self.center.0 + self.velocity.0 * t + self.wobble.0 * w,
            self.center.1 + self.velocity.1 * t + self.wobble.1 * w,
        )
    }

    fn signed_distance(&self, t: f64, y: f64, x: f64) -> f64 {
        let (cy, cx) = self.center_at(t);
        let (dy, dx) = (y - cy, x - cx);
        let d = match self.shape {
            Shape::Disk => dy.hypot(dx),
            Shape::Capsule {
                half_length,
                angle_deg,
            } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                let along = (dx * c + dy * s).clamp(-half_length, half_length);
                (dy - along * s).hypot(dx - along * c)
            }
        };
        d - self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    /// `(height, width)`, multiples of 16.
    pub size: (usize, usize),
    pub mode: SceneMode,
    pub bg_motion: Motion,
    pub sprites: Vec<Sprite>,
    /// Foreground-like sprites painted into the background at their frame-0
    /// geometry; they move only with the background and carry zero alpha.
    #[serde(default)]
    pub distractors: Vec<Sprite>,
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl SceneSpec {
    /// A random scene drawn from `seed` with one or two foreground sprites.
    /// Distractors are never drawn here; they only come from explicit specs.
    pub fn random(
        seed: u64,
        frames: usize,
        size: (usize, usize),
        mode: SceneMode,
        softness: (f64, f64),
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
        let (h, w) = (size.0 as f64, size.1 as f64);
        let side = h.min(w);
        let sprite = |rng: &mut ChaCha8Rng, i: usize| {
            let shape = if i == 0 || rng.gen_bool(0.5) {
                Shape::Capsule {
                    half_length: rng.gen_range(0.05..0.2) * side,
                    angle_deg: rng.gen_range(-90.0..90.0),
                }
            } else {
                Shape::Disk
            };
            Sprite {
                shape,
                center: (rng.gen_range(0.3..0.7) * h, rng.gen_range(0.3..0.7) * w),
                velocity: (
                    rng.gen_range(-0.01..0.01) * side,
                    rng.gen_range(-0.01..0.01) * side,
                ),
                wobble: (
                    rng.gen_range(0.0..0.06) * side,
                    rng.gen_range(0.0..0.06) * side,
                ),
                wobble_rate: rng.gen_range(0.1..0.5),
                radius: rng.gen_range(0.1..0.2) * side,
                softness: rng.gen_range(softness.0..=softness.1),
            }
        };
        let count = rng.gen_range(1..=2);
        let sprites = (0..count).map(|i| sprite(&mut rng, i)).collect();
        let bg_motion = match mode {
            SceneMode::StaticBg => Motion::IDENTITY,
            SceneMode::DynamicBg => Motion {
                tx: rng.gen_range(-0.02..0.02) * side,
                ty: rng.gen_range(-0.02..0.02) * side,
                rot_deg: rng.gen_range(-1.0..1.0),
                zoom: rng.gen_range(-0.01..0.01),
            },
        };
        Self {
            seed,
            frames,
            size,
            mode,
            bg_motion,
            sprites,
            distractors: Vec::new(),
        }
    }

    /// The same scene with all lengths multiplied by `factor`.
    pub fn scaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        let mut out = self.clone();
        out.size = (self.size.0 * factor, self.size.1 * factor);
        out.bg_motion.tx *= f;
        out.bg_motion.ty *= f;
        for s in out.sprites.iter_mut().chain(&mut out.distractors) {
            s.center = (s.center.0 * f, s.center.1 * f);
            s.velocity = (s.velocity.0 * f, s.velocity.1 * f);
            s.wobble = (s.wobble.0 * f, s.wobble.1 * f);
            s.radius *= f;
            s.softness *= f;
            if let Shape::Capsule { half_length, .. } = &mut s.shape {
                *half_length *= f;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.size;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Config(format!(
                "scene size {h}×{w} must be positive multiples of 16"
            )));
        }
        if self.frames == 0 {
            return Err(Error::Config("scene needs at least one frame".into()));
        }
        if self
            .sprites
            .iter()
            .chain(&self.distractors)
            .any(|s| !(s.softness > 0.0) || !(s.radius > 0.0))
        {
            return Err(Error::Config(
                "sprite radius and softness must be positive".into(),
            ));
        }
        if self.mode == SceneMode::StaticBg && !self.bg_motion.is_identity() {
            return Err(Error::Config(
                "static-background scenes cannot have background motion".into(),
            ));
        }
        Ok(())
    }
}

/// Frames with their ground truth and compositing layers; all tensors are
/// `C×H×W` with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LabeledSequence {
    pub frames: Vec<Tensor>,
    pub alpha: Vec<Tensor>,
    /// Binary foreground indicator `alpha >= 0.5`.
    pub mask: Vec<Tensor>,
    pub foreground: Vec<Tensor>,
    pub background: Vec<Tensor>,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[1], s[2])
    }

    /// Bit-for-bit equality of every tensor.
    pub fn identical(&self, other: &Self) -> bool {
        let same = |a: &[Tensor], b: &[Tensor]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| {
                    x.shape() == y.shape()
                        && x.data()
                            .iter()
                            .zip(y.data())
                            .all(|(p, q)| p.to_bits() == q.to_bits())
                })
        };
        same(&self.frames, &other.frames)
            && same(&self.alpha, &other.alpha)
            && same(&self.mask, &other.mask)
            && same(&self.foreground, &other.foreground)
            && same(&self.background, &other.background)
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let r = start..start + len;
        Self {
            frames: self.frames[r.clone()].to_vec(),
            alpha: self.alpha[r.clone()].to_vec(),
            mask: self.mask[r.clone()].to_vec(),
            foreground: self.foreground[r.clone()].to_vec(),
            background: self.background[r].to_vec(),
        }
    }
}

/// Seeded texture parameters.
struct Texture {
    base: [f64; 3],
    amp: [f64; 3],
    freq: [(f64, f64); 3],
    phase: [f64; 3],
    ramp: (f64, f64),
}

impl Texture {
    fn sample(rng: &mut ChaCha8Rng, freq: std::ops::Range<f64>, amp: std::ops::Range<f64>) -> Self {
        let mut t = Texture {
            base: [0.0; 3],
            amp: [0.0; 3],
            freq: [(0.0, 0.0); 3],
            phase: [0.0; 3],
            ramp: (rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)),
        };
        for c in 0..3 {
            t.base[c] = rng.gen_range(0.25..0.75);
            t.amp[c] = rng.gen_range(amp.clone());
            let f = rng.gen_range(freq.clone());
            let a = rng.gen_range(0.0..2.0 * PI);
            t.freq[c] = (f * a.sin(), f * a.cos());
            t.phase[c] = rng.gen_range(0.0..2.0 * PI);
        }
        t
    }

    /// Value at normalized coordinates (`y`, `x` in image heights).
    fn at(&self, c: usize, y: f64, x: f64) -> f32 {
        let v = self.base[c]
            + self.amp[c] * (self.freq[c].0 * y + self.freq[c].1 * x + self.phase[c]).sin()
            + self.ramp.0 * (y - 0.5)
            + self.ramp.1 * (x - 0.5);
        v.clamp(0.0, 1.0) as f32
    }
}

fn composite(alpha: &[f32], fg: &[f32], bg: &[f32]) -> Vec<f32> {
    let p = alpha.len();
    (0..3 * p)
        .map(|i| {
            let a = alpha[i % p];
            a * fg[i] + (1.0 - a) * bg[i]
        })
        .collect()
}

fn binary_mask(alpha: &[f32]) -> Vec<f32> {
    alpha
        .iter()
        .map(|&a| if a >= 0.5 { 1.0 } else { 0.0 })
        .collect()
}

fn push_frame(
    seq: &mut LabeledSequence,
    size: (usize, usize),
    alpha: Vec<f32>,
    fg: Vec<f32>,
    bg: Vec<f32>,
) -> Result<()> {
    let (h, w) = size;
    seq.frames
        .push(Tensor::from_vec(&[3, h, w], composite(&alpha, &fg, &bg))?);
    seq.mask
        .push(Tensor::from_vec(&[1, h, w], binary_mask(&alpha))?);
    seq.alpha.push(Tensor::from_vec(&[1, h, w], alpha)?);
    seq.foreground.push(Tensor::from_vec(&[3, h, w], fg)?);
    seq.background.push(Tensor::from_vec(&[3, h, w], bg)?);
    Ok(())
}

fn empty_sequence(n: usize) -> LabeledSequence {
    LabeledSequence {
        frames: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
        mask: Vec::with_capacity(n),
        foreground: Vec::with_capacity(n),
        background: Vec::with_capacity(n),
    }
}

pub fn generate_sequence(spec: &SceneSpec) -> Result<LabeledSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bg_tex = Texture::sample(&mut rng, 2.0..8.0, 0.1..0.25);
    let fg_tex = Texture::sample(&mut rng, 20.0..40.0, 0.1..0.2);
    let decoys: Vec<Texture> = spec
        .distractors
        .iter()
        .map(|_| Texture::sample(&mut rng, 20.0..40.0, 0.1..0.2))
        .collect();
    let (h, w) = spec.size;
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let norm = h as f64;
    let mut seq = empty_sequence(spec.frames);
    for t in 0..spec.frames {
        let tf = t as f64;
        let anchor = spec.sprites.first().map_or((cy, cx), |s| s.center_at(tf));
        let mut alpha = vec![0f32; h * w];
        let mut fg = vec![0f32; 3 * h * w];
        let mut bg = vec![0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let i = y * w + x;
                let a = spec
                    .sprites
                    .iter()
                    .map(|s| {
                        1.0 - smoothstep(
                            -1.5 * s.softness,
                            1.5 * s.softness,
                            s.signed_distance(tf, py, px),
                        )
                    })
                    .fold(0.0f64, f64::max);
                alpha[i] = a as f32;
                let (by, bx) = spec.bg_motion.inverse(tf, cy, cx, py, px);
                let (fy, fx) = (py - anchor.0, px - anchor.1);
                for c in 0..3 {
                    bg[c * h * w + i] = bg_tex.at(c, by / norm, bx / norm);
                    fg[c * h * w + i] = fg_tex.at(c, fy / norm, fx / norm);
                }
                for (d, tex) in spec.distractors.iter().zip(&decoys) {
                    let cover = 1.0
                        - smoothstep(
                            -1.5 * d.softness,
                            1.5 * d.softness,
                            d.signed_distance(0.0, by, bx),
                        );
                    if cover > 0.0 {
                        let (dy, dx) = ((by - d.center.0) / norm, (bx - d.center.1) / norm);
                        for c in 0..3 {
                            let k = c * h * w + i;
                            bg[k] = ((1.0 - cover) * bg[k] as f64
                                + cover * tex.at(c, dy, dx) as f64)
                                as f32;
                        }
                    }
                }
            }
        }
        push_frame(&mut seq, spec.size, alpha, fg, bg)?;
    }
    Ok(seq)
}

/// Bilinear sample of channel-major `data` at `(y, x)` in pixel-centre
/// coordinates, clamping to the border.
fn sample(data: &[f32], h: usize, w: usize, c: usize, y: f64, x: f64) -> f32 {
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (wy, wx) = ((fy - y0 as f64) as f32, (fx - x0 as f64) as f32);
    let at = |yy: usize, xx: usize| data[c * h * w + yy * w + xx];
    let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
    let bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
    top * (1.0 - wy) + bottom * wy
}

fn warp(data: &[f32], channels: usize, h: usize, w: usize, motion: &Motion, t: f64) -> Vec<f32> {
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let mut out = vec![0f32; channels * h * w];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = motion.inverse(t, cy, cx, y as f64 + 0.5, x as f64 + 0.5);
            for c in 0..channels {
                out[c * h * w + y * w + x] = sample(data, h, w, c, sy, sx);
            }
        }
    }
    out
}

/// Animates the first frame of `still` by moving its foreground (layer and
/// alpha) with `fg` and its background with `bg`, recompositing each frame.
pub fn motion_augment_with(
    still: &LabeledSequence,
    frames: usize,
    fg: &Motion,
    bg: &Motion,
) -> Result<LabeledSequence> {
    if still.is_empty() {
        return Err(Error::Contract(
            "motion augmentation needs one input frame".into(),
        ));
    }
    let (h, w) = still.size();
    let alpha0 = still.alpha[0].data();
    let fg0 = still.foreground[0].data();
    let bg0 = still.background[0].data();
    let mut seq = empty_sequence(frames);
    for t in 0..frames {
        let tf = t as f64;
        let alpha = warp(alpha0, 1, h, w, fg, tf)
            .into_iter()
            .map(|a| a.clamp(0.0, 1.0))
            .collect();
        push_frame(
            &mut seq,
            (h, w),
            alpha,
            warp(fg0, 3, h, w, fg, tf),
            warp(bg0, 3, h, w, bg, tf),
        )?;
    }
    Ok(seq)
}

/// Random independent foreground and background trajectories whose
/// per-frame magnitude scales with `magnitude` (0 leaves the frames still).
pub fn motion_augment(
    still: &LabeledSequence,
    frames: usize,
    seed: u64,
    magnitude: f64,
) -> Result<LabeledSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = still.size();
    let side = h.min(w) as f64;
    let mut draw = |trans: f64, rot: f64, zoom: f64| Motion {
        tx: magnitude * rng.gen_range(-trans..=trans) * side,
        ty: magnitude * rng.gen_range(-trans..=trans) * side,
        rot_deg: magnitude * rng.gen_range(-rot..=rot),
        zoom: magnitude * rng.gen_range(-zoom..=zoom),
    };
    let fg = draw(0.02, 2.0, 0.01);
    let bg = draw(0.01, 1.0, 0.005);
    motion_augment_with(still, frames, &fg, &bg)
}

/// A label-preserving rearrangement of a clip: mirror flips, a permutation
/// of the colour channels and time reversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub flip_h: bool,
    pub flip_v: bool,
    pub channels: [usize; 3],
    pub reverse: bool,
}

impl Layout {
    pub const IDENTITY: Layout = Layout {
        flip_h: false,
        flip_v: false,
        channels: [0, 1, 2],
        reverse: false,
    };

    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        Layout {
            flip_h: rng.gen_bool(0.5),
            flip_v: rng.gen_bool(0.5),
            channels: PERMS[rng.gen_range(0..6)],
            reverse: rng.gen_bool(0.5),
        }
    }

    fn apply(&self, t: &Tensor, colour: bool) -> Tensor {
        let s = t.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let d = t.data();
        let mut out = Vec::with_capacity(d.len());
        for ch in 0..c {
            let src = if colour { self.channels[ch] } else { ch };
            for y in 0..h {
                let sy = if self.flip_v { h - 1 - y } else { y };
                for x in 0..w {
                    let sx = if self.flip_h { w - 1 - x } else { x };
                    out.push(d[(src * h + sy) * w + sx]);
                }
            }
        }
        Tensor::from_vec(s, out).expect("same shape")
    }
}

/// `seq` rearranged by `layout`; compositing still holds frame by frame.
pub fn apply_layout(seq: &LabeledSequence, layout: &Layout) -> LabeledSequence {
    let map = |v: &[Tensor], colour: bool| -> Vec<Tensor> {
        let mut out: Vec<Tensor> = v.iter().map(|t| layout.apply(t, colour)).collect();
        if layout.reverse {
            out.reverse();
        }
        out
    };
    LabeledSequence {
        frames: map(&seq.frames, true),
        alpha: map(&seq.alpha, false),
        mask: map(&seq.mask, false),
        foreground: map(&seq.foreground, true),
        background: map(&seq.background, true),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    Dilate,
    Erode,
    /// Inverts a seeded square of side `2·magnitude + 1`.
    FlipRegion,
}

fn morph(mask: &[bool], h: usize, w: usize, grow: bool) -> Vec<bool> {
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let mut v = mask[i];
            let mut visit = |j: usize| {
                if grow {
                    v |= mask[j];
                } else {
                    v &= mask[j];
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            v
        })
        .collect()
}

/// Corrupts a binary `1×H×W` mask. Dilation and erosion apply the
/// 4-neighbourhood step `magnitude` times; erosion treats pixels outside
/// the image as foreground.
pub fn corrupt_mask(
    mask: &Tensor,
    kind: Corruption,
    magnitude: usize,
    seed: u64,
) -> Result<Tensor> {
    if mask.ndim() != 3 || mask.shape()[0] != 1 {
        return Err(Error::Dimension(format!(
            "mask must be 1×H×W, got {:?}",
            mask.shape()
        )));
    }
    let (h, w) = (mask.shape()[1], mask.shape()[2]);
    let mut m: Vec<bool> = mask.data().iter().map(|&v| v >= 0.5).collect();
    match kind {
        Corruption::Dilate | Corruption::Erode => {
            for _ in 0..magnitude {
                m = morph(&m, h, w, kind == Corruption::Dilate);
            }
        }
        Corruption::FlipRegion if magnitude > 0 => {
            let side = (2 * magnitude + 1).min(h).min(w);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y0 = rng.gen_range(0..=h - side);
            let x0 = rng.gen_range(0..=w - side);
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    m[y * w + x] = !m[y * w + x];
                }
            }
        }
        Corruption::FlipRegion => {}
    }
    Ok(Tensor::from_vec(
        mask.shape(),
        m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )?)
}
