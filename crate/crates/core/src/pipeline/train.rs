//! Three-stage training on synthetic data with truncated backpropagation
//! through the memory.

use adamatte_tensor::{Tensor, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{lr_at, AdamW};
use super::session::Session;
use crate::config::{Ablation, ModelConfig};
use crate::error::{Error, Result};
use crate::fgbg::MemoryBank;
use crate::losses::{
    mask_only_loss, pseudo_mask, total_loss, FrameTargets, LossBreakdown, LossWeights,
};
use crate::model::AdaMatte;
use crate::nn::Mode;
use crate::synth::{
    apply_layout, generate_sequence, motion_augment, LabeledSequence, Layout, SceneMode, SceneSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub steps: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// Spatial scale of the training data relative to [`TrainConfig::size`].
    pub scale: usize,
    /// Alternate matting (odd steps) with mask-only segmentation batches.
    pub alternate: bool,
    /// Mask-only segmentation objective on every step.
    pub segmentation_only: bool,
    /// Write memory with ground-truth masks instead of predictions.
    pub teacher_forcing: bool,
    /// Normalize with the frozen running statistics, as at inference.
    pub freeze_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Number of matting sequences; segmentation clips are drawn fresh for
    /// every visit.
    pub sequences: usize,
    pub frames: usize,
    pub size: (usize, usize),
    /// Frames per truncated-backpropagation window; one window per step.
    pub window: usize,
    pub grad_clip: f64,
    pub tau: f64,
    /// Visit matting clips under random flips, channel orders and time
    /// reversal.
    pub augment: bool,
    pub loss_weights: LossWeights,
    pub model: ModelConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            sequences: 6,
            frames: 16,
            size: (64, 64),
            window: 4,
            grad_clip: 1.0,
            tau: 0.5,
            augment: true,
            loss_weights: LossWeights::default(),
            model: ModelConfig::default(),
            stage1: StageConfig {
                steps: 1000,
                base_lr: 1e-3,
                weight_decay: 0.03,
                warmup_steps: 50,
                scale: 1,
                alternate: false,
                segmentation_only: true,
                teacher_forcing: true,
                freeze_norm: false,
            },
            stage2: StageConfig {
                steps: 2000,
                base_lr: 5e-4,
                weight_decay: 0.07,
                warmup_steps: 100,
                scale: 1,
                alternate: true,
                segmentation_only: false,
                teacher_forcing: false,
                freeze_norm: true,
            },
            stage3: StageConfig {
                steps: 300,
                base_lr: 1e-4,
                weight_decay: 0.07,
                warmup_steps: 15,
                scale: 2,
                alternate: false,
                segmentation_only: false,
                teacher_forcing: false,
                freeze_norm: true,
            },
        }
    }
}

impl TrainConfig {
    pub fn stage(&self, stage: u8) -> Result<&StageConfig> {
        match stage {
            1 => Ok(&self.stage1),
            2 => Ok(&self.stage2),
            3 => Ok(&self.stage3),
            _ => Err(Error::Config(format!("no training stage {stage}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.sequences == 0 || self.window == 0 || self.frames < self.window {
            return Err(Error::Config(
                "need sequences and frames ≥ window ≥ 1".into(),
            ));
        }
        for s in [&self.stage1, &self.stage2, &self.stage3] {
            if s.steps == 0 || s.scale == 0 || s.warmup_steps > s.steps || !(s.base_lr > 0.0) {
                return Err(Error::Config(
                    "stage steps, scale and learning rate must be positive".into(),
                ));
            }
        }
        if self.stage3.scale < self.stage2.scale {
            return Err(Error::Config(
                "stage 3 resolution must not be below stage 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    Matting,
    Segmentation,
}

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: u8,
    pub step: usize,
    pub lr: f64,
    pub batch: BatchKind,
    pub loss: f64,
    pub mask_bce: f64,
    pub coarse_l1: f64,
    pub coarse_lap: f64,
    pub fine_l1: f64,
    pub fine_lap: f64,
    pub grad_norm: f64,
}

fn scene_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(i as u64 * 7919 + 1)
}

/// Soft-edged matting scenes, alternating static and dynamic backgrounds.
pub fn matting_specs(
    seed: u64,
    count: usize,
    frames: usize,
    size: (usize, usize),
) -> Vec<SceneSpec> {
    let unit = size.0.min(size.1) as f64 / 64.0;
    (0..count)
        .map(|i| {
            let mode = if i % 2 == 0 {
                SceneMode::DynamicBg
            } else {
                SceneMode::StaticBg
            };
            SceneSpec::random(
                scene_seed(seed, i),
                frames,
                size,
                mode,
                (0.5 * unit, 2.0 * unit),
            )
        })
        .collect()
}

/// Hard-edged still number `index` animated by random motion augmentation.
pub fn segmentation_clip(
    seed: u64,
    index: usize,
    frames: usize,
    size: (usize, usize),
) -> Result<LabeledSequence> {
    let s = scene_seed(seed ^ 0xC11F, index);
    let still = generate_sequence(&SceneSpec::random(
        s,
        1,
        size,
        SceneMode::StaticBg,
        (0.05, 0.05),
    ))?;
    motion_augment(&still, frames, s, 1.0)
}

/// The matting clips of a stage at `scale` times the configured size.
pub fn matting_clips(cfg: &TrainConfig, scale: usize) -> Result<Vec<LabeledSequence>> {
    matting_specs(cfg.seed, cfg.sequences, cfg.frames, cfg.size)
        .iter()
        .map(|s| generate_sequence(&s.scaled(scale)))
        .collect()
}

/// Where a stream takes its next clip from.
enum Source<'d> {
    /// A fixed set visited round-robin, optionally under a random [`Layout`]
    /// per visit.
    Fixed {
        clips: &'d [LabeledSequence],
        layouts: Option<ChaCha8Rng>,
    },
    /// A new segmentation clip per visit.
    Fresh {
        seed: u64,
        frames: usize,
        size: (usize, usize),
    },
}

struct Active {
    clip: LabeledSequence,
    index: usize,
    pos: usize,
    bank: MemoryBank,
}

/// Clip cursor carrying memory between the windows of one clip.
struct Stream<'d> {
    source: Source<'d>,
    next: usize,
    active: Option<Active>,
}

impl<'d> Stream<'d> {
    fn new(source: Source<'d>) -> Self {
        Self {
            source,
            next: 0,
            active: None,
        }
    }

    fn next_clip(&mut self) -> Result<(usize, LabeledSequence)> {
        let index = self.next;
        self.next += 1;
        let clip = match &mut self.source {
            Source::Fixed { clips, layouts } => {
                let clip = &clips[index % clips.len()];
                match layouts {
                    Some(rng) => apply_layout(clip, &Layout::random(rng)),
                    None => clip.clone(),
                }
            }
            Source::Fresh { seed, frames, size } => {
                segmentation_clip(*seed, index, *frames, *size)?
            }
        };
        Ok((index, clip))
    }
}

fn non_finite(stage: u8, step: usize, detail: String) -> Error {
    Error::NonFiniteLoss {
        stage,
        step,
        detail,
    }
}

#[allow(clippy::too_many_arguments)]
fn run_window(
    model: &AdaMatte,
    stream: &mut Stream<'_>,
    cfg: &TrainConfig,
    stage_cfg: &StageConfig,
    kind: BatchKind,
    stage: u8,
    step: usize,
) -> Result<(Tensor, [f64; 5])> {
    let window = cfg.window;
    let ablation = Ablation::default();
    let mode = if stage_cfg.freeze_norm {
        Mode::Eval
    } else {
        Mode::Train
    };
    let (clip, index, pos, mut session) = match stream.active.take() {
        Some(a) if a.pos + window <= a.clip.len() => {
            let size = a.clip.size();
            let session = Session::resume(model, a.bank, a.pos, size, ablation, mode);
            (a.clip, a.index, a.pos, session)
        }
        _ => {
            let (index, clip) = stream.next_clip()?;
            let init = pseudo_mask(&clip.alpha[0], cfg.tau)?;
            let session = Session::init(model, &clip.frames[0], &init, ablation, mode)?;
            (clip, index, 0, session)
        }
    };
    let mut total: Option<Tensor> = None;
    let mut parts = [0.0; 5];
    for t in pos..pos + window {
        let guidance = stage_cfg.teacher_forcing.then_some(&clip.mask[t]);
        let out = session.step_frame_guided(&clip.frames[t], guidance)?;
        let targets = FrameTargets::new(&clip.alpha[t], cfg.tau)?;
        let lb: LossBreakdown = match kind {
            BatchKind::Matting => total_loss(&out, &targets, &cfg.loss_weights)?,
            BatchKind::Segmentation => mask_only_loss(&out, &targets)?,
        };
        for (acc, v) in parts.iter_mut().zip([
            lb.mask_bce,
            lb.coarse_l1,
            lb.coarse_lap,
            lb.fine_l1,
            lb.fine_lap,
        ]) {
            *acc += v / window as f64;
        }
        total = Some(match total {
            Some(acc) => acc.add(&lb.total)?,
            None => lb.total,
        });
    }
    let loss = total.expect("window ≥ 1").scale(1.0 / window as f32)?;
    let mut bank = session.into_bank();
    bank.detach();
    let end = pos + window;
    stream.active = Some(Active {
        clip,
        index,
        pos: end,
        bank,
    });
    if !loss.item()?.is_finite() {
        return Err(non_finite(
            stage,
            step,
            format!("clip {index} frames {pos}..{end}"),
        ));
    }
    Ok((loss, parts))
}

/// Runs `stage` (1, 2 or 3) on `model`, passing each trace record to `sink`.
pub fn train_stage(
    model: &mut AdaMatte,
    cfg: &TrainConfig,
    stage: u8,
    mut sink: impl FnMut(&TraceRecord),
) -> Result<Vec<TraceRecord>> {
    cfg.validate()?;
    let sc = cfg.stage(stage)?.clone();
    let clips = matting_clips(cfg, sc.scale)?;
    let layouts = cfg
        .augment
        .then(|| ChaCha8Rng::seed_from_u64(scene_seed(cfg.seed ^ 0x1A70, stage as usize)));
    let mut matting = Stream::new(Source::Fixed {
        clips: &clips,
        layouts,
    });
    let mut segmentation = Stream::new(Source::Fresh {
        seed: cfg.seed,
        frames: cfg.frames,
        size: (cfg.size.0 * sc.scale, cfg.size.1 * sc.scale),
    });
    let mut opt = AdamW::new(sc.weight_decay);
    let mut trace = Vec::with_capacity(sc.steps);
    for step in 0..sc.steps {
        let kind = if sc.segmentation_only || (sc.alternate && step % 2 == 1) {
            BatchKind::Segmentation
        } else {
            BatchKind::Matting
        };
        let stream = match kind {
            BatchKind::Matting => &mut matting,
            BatchKind::Segmentation => &mut segmentation,
        };
        let (loss, parts) =
            run_window(model, stream, cfg, &sc, kind, stage, step).map_err(|e| match e {
                Error::Tensor(TensorError::NonFinite { op }) => {
                    non_finite(stage, step, format!("non-finite output of `{op}`"))
                }
                other => other,
            })?;
        let value = loss.item()? as f64;
        loss.backward()?;
        drop(loss);
        let mut grads = AdamW::gradients(&model.store);
        let grad_norm = AdamW::clip_global_norm(&mut grads, cfg.grad_clip);
        if !grad_norm.is_finite() {
            return Err(non_finite(stage, step, "non-finite gradient norm".into()));
        }
        let lr = lr_at(step, sc.steps, sc.warmup_steps, sc.base_lr);
        opt.step(&mut model.store, &grads, lr)?;
        let record = TraceRecord {
            stage,
            step,
            lr,
            batch: kind,
            loss: value,
            mask_bce: parts[0],
            coarse_l1: parts[1],
            coarse_lap: parts[2],
            fine_l1: parts[3],
            fine_lap: parts[4],
            grad_norm,
        };
        sink(&record);
        trace.push(record);
    }
    Ok(trace)
}

/// Mean loss of the first and last `n` records of the given batch kind.
pub fn smoothed_endpoints(trace: &[TraceRecord], kind: BatchKind, n: usize) -> Option<(f64, f64)> {
    let losses: Vec<f64> = trace
        .iter()
        .filter(|r| r.batch == kind)
        .map(|r| r.loss)
        .collect();
    if losses.is_empty() {
        return None;
    }
    let n = n.min(losses.len()).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&losses[..n]), mean(&losses[losses.len() - n..])))
}
