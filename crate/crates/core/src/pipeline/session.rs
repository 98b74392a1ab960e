use std::path::PathBuf;
use std::time::{Duration, Instant};

use adamatte_tensor::{no_grad, Scalar, Tensor};

use crate::config::{Ablation, UpdateMode};
use crate::decoder::{mask_to_guidance, DecoderOutputs};
use crate::error::{Error, Result};
use crate::fgbg::MemoryBank;
use crate::losses::pseudo_mask;
use crate::model::AdaMatte;
use crate::nn::Mode;
use crate::synth::{corrupt_mask, Corruption};

/// Area-averages (or, for non-integer ratios, bilinearly resizes) a
/// `1×H×W` map to the token grid.
pub fn downsample_to_grid<T: Scalar>(mask: &Tensor<T>, grid: (usize, usize)) -> Result<Tensor<T>> {
    if mask.ndim() != 3 || mask.shape()[0] != 1 {
        return Err(Error::Dimension(format!(
            "mask must be 1×H×W, got {:?}",
            mask.shape()
        )));
    }
    let (h, w) = (mask.shape()[1], mask.shape()[2]);
    let (gh, gw) = grid;
    if h % gh == 0 && w % gw == 0 && h / gh == w / gw {
        Ok(mask.avg_pool(h / gh)?)
    } else {
        Ok(mask.bilinear_resize(gh, gw)?)
    }
}

fn check_unit_range<T: Scalar>(what: &str, t: &Tensor<T>) -> Result<()> {
    if t.data().iter().any(|&v| v < T::zero() || v > T::one()) {
        return Err(Error::Contract(format!("{what} values must lie in [0, 1]")));
    }
    Ok(())
}

/// Per-frame inference state over one sequence.
#[derive(Debug)]
pub struct Session<'m, T: Scalar = f32> {
    model: &'m AdaMatte<T>,
    bank: MemoryBank<T>,
    frame_index: usize,
    size: (usize, usize),
    ablation: Ablation,
    mode: Mode,
    warnings: Vec<String>,
}

impl<'m, T: Scalar> Session<'m, T> {
    /// Encodes `frame0` and seeds both memory compartments with its entry,
    /// Fg/Bg-embedded with `initial_mask` (`1×H'×W'`, values in `[0, 1]`).
    pub fn init(
        model: &'m AdaMatte<T>,
        frame0: &Tensor<T>,
        initial_mask: &Tensor<T>,
        ablation: Ablation,
        mode: Mode,
    ) -> Result<Self> {
        check_unit_range("initial mask", initial_mask)?;
        if frame0.ndim() != 3 {
            return Err(Error::Dimension(format!(
                "frame must be 3×H×W, got {:?}",
                frame0.shape()
            )));
        }
        let size = (frame0.shape()[1], frame0.shape()[2]);
        let mut warnings = Vec::new();
        if !initial_mask.data().iter().any(|&v| v >= T::of(0.5)) {
            warnings.push("initial mask has no foreground pixels".to_owned());
            log::warn!("initial mask has no foreground pixels");
        }
        let grid = (size.0 / 16, size.1 / 16);
        let guidance = match ablation.update {
            UpdateMode::None => None,
            UpdateMode::Mask | UpdateMode::Alpha => {
                Some(downsample_to_grid(&initial_mask.detach(), grid)?)
            }
        };
        let (entry, grid) =
            model.initial_memory(frame0, guidance.as_ref(), ablation.attention, mode)?;
        let mut bank = model.new_bank();
        bank.write(0, grid, entry)?;
        Ok(Self {
            model,
            bank,
            frame_index: 0,
            size,
            ablation,
            mode,
            warnings,
        })
    }

    /// Continues a session from a memory bank taken out of an earlier one.
    pub fn resume(
        model: &'m AdaMatte<T>,
        bank: MemoryBank<T>,
        frame_index: usize,
        size: (usize, usize),
        ablation: Ablation,
        mode: Mode,
    ) -> Self {
        Self {
            model,
            bank,
            frame_index,
            size,
            ablation,
            mode,
            warnings: Vec::new(),
        }
    }

    pub fn into_bank(self) -> MemoryBank<T> {
        self.bank
    }

    pub fn bank(&self) -> &MemoryBank<T> {
        &self.bank
    }

    /// Number of frames processed by [`Self::step_frame`].
    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    /// Cuts the stored memory from the gradient tape.
    pub fn detach_memory(&mut self) {
        self.bank.detach();
    }

    pub fn step_frame(&mut self, frame: &Tensor<T>) -> Result<DecoderOutputs<T>> {
        self.step_frame_guided(frame, None)
    }

    /// As [`Self::step_frame`], but when `guidance` (`1×H×W` in `[0, 1]`) is
    /// given it replaces the predicted signal in the memory update.
    pub fn step_frame_guided(
        &mut self,
        frame: &Tensor<T>,
        guidance: Option<&Tensor<T>>,
    ) -> Result<DecoderOutputs<T>> {
        if frame.ndim() != 3 || (frame.shape()[1], frame.shape()[2]) != self.size {
            return Err(Error::Dimension(format!(
                "frame {:?} does not match the session size {:?}",
                frame.shape(),
                self.size
            )));
        }
        let t = self.frame_index;
        let out =
            self.model
                .forward_frame(frame, &self.bank, t, self.ablation.attention, self.mode)?;
        let signal = match (self.ablation.update, guidance) {
            (UpdateMode::None, _) => None,
            (_, Some(g)) => {
                check_unit_range("guidance", g)?;
                Some(downsample_to_grid(&g.detach(), out.grid)?)
            }
            (UpdateMode::Mask, None) => Some(mask_to_guidance(&out.outputs.mask_logits)?),
            (UpdateMode::Alpha, None) => {
                let hard = pseudo_mask(&out.outputs.alpha_fine.detach(), 0.5)?;
                Some(downsample_to_grid(&hard, out.grid)?)
            }
        };
        let entry =
            self.model
                .transformer
                .embed_memory(&self.model.store, &out.memory, signal.as_ref())?;
        self.bank.write(t, out.grid, entry)?;
        self.frame_index += 1;
        Ok(out.outputs)
    }
}

/// Source of the mask used to seed memory at the first frame.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialMask {
    /// Thresholded ground-truth alpha.
    Oracle,
    /// The oracle mask passed through [`corrupt_mask`].
    Corrupted {
        kind: Corruption,
        magnitude: usize,
        seed: u64,
    },
    /// An 8-bit mask image on disk.
    File(PathBuf),
}

impl InitialMask {
    /// Resolves to a `1×H×W` mask given the first frame's ground-truth alpha
    /// (required by the oracle variants).
    pub fn resolve(&self, alpha_gt0: Option<&Tensor>) -> Result<Tensor> {
        let oracle = || {
            alpha_gt0
                .ok_or_else(|| {
                    Error::Contract("oracle initial mask needs ground-truth alpha".into())
                })
                .and_then(|a| pseudo_mask(a, 0.5))
        };
        match self {
            InitialMask::Oracle => oracle(),
            InitialMask::Corrupted {
                kind,
                magnitude,
                seed,
            } => corrupt_mask(&oracle()?, *kind, *magnitude, *seed),
            InitialMask::File(path) => crate::io::read_mask(path),
        }
    }
}

/// Per-frame outputs of one pass over a sequence.
#[derive(Debug, Clone)]
pub struct SequenceOutput<T: Scalar = f32> {
    pub alphas: Vec<Tensor<T>>,
    /// Foreground probability at 1/4 scale.
    pub masks: Vec<Tensor<T>>,
    pub timings: Vec<Duration>,
    pub warnings: Vec<String>,
}

fn collect<T: Scalar>(
    session: &mut Session<'_, T>,
    frames: impl Iterator<Item = Tensor<T>>,
    out: &mut SequenceOutput<T>,
) -> Result<()> {
    for frame in frames {
        let start = Instant::now();
        let o = session.step_frame(&frame)?;
        out.timings.push(start.elapsed());
        out.masks.push(o.mask_logits.softmax(0)?.narrow(0, 1, 1)?);
        out.alphas.push(o.alpha_fine);
    }
    Ok(())
}

fn empty_output<T: Scalar>(n: usize) -> SequenceOutput<T> {
    SequenceOutput {
        alphas: Vec::with_capacity(n),
        masks: Vec::with_capacity(n),
        timings: Vec::with_capacity(n),
        warnings: Vec::new(),
    }
}

/// Forward inference over `frames` with frozen normalization statistics.
pub fn run_sequence<T: Scalar>(
    model: &AdaMatte<T>,
    frames: &[Tensor<T>],
    initial_mask: &Tensor<T>,
    ablation: Ablation,
) -> Result<SequenceOutput<T>> {
    if frames.is_empty() {
        return Err(Error::Contract("cannot run an empty sequence".into()));
    }
    no_grad(|| {
        let mut session = Session::init(model, &frames[0], initial_mask, ablation, Mode::Eval)?;
        let mut out = empty_output(frames.len());
        collect(&mut session, frames.iter().cloned(), &mut out)?;
        out.warnings = session.warnings().to_vec();
        Ok(out)
    })
}

#[derive(Debug, Clone)]
pub struct BidirectionalOutput<T: Scalar = f32> {
    pub forward: SequenceOutput<T>,
    /// Outputs of the reverse pass, in chronological order.
    pub reverse: SequenceOutput<T>,
}

/// A forward pass followed by a pass over the frames newest to oldest that
/// keeps reading and writing the forward pass's memory.
pub fn bidirectional_infer<T: Scalar>(
    model: &AdaMatte<T>,
    frames: &[Tensor<T>],
    initial_mask: &Tensor<T>,
    ablation: Ablation,
) -> Result<BidirectionalOutput<T>> {
    if frames.len() < 2 {
        return Err(Error::Contract(
            "bidirectional inference needs at least two frames".into(),
        ));
    }
    no_grad(|| {
        let mut session = Session::init(model, &frames[0], initial_mask, ablation, Mode::Eval)?;
        let mut forward = empty_output(frames.len());
        collect(&mut session, frames.iter().cloned(), &mut forward)?;
        let mut reverse = empty_output(frames.len());
        collect(&mut session, frames.iter().rev().cloned(), &mut reverse)?;
        reverse.alphas.reverse();
        reverse.masks.reverse();
        reverse.timings.reverse();
        forward.warnings = session.warnings().to_vec();
        reverse.warnings = forward.warnings.clone();
        Ok(BidirectionalOutput { forward, reverse })
    })
}
