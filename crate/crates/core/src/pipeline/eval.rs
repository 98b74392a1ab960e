//! Held-out evaluation of a model on synthetic sequences.

use crate::config::Ablation;
use crate::error::Result;
use crate::io::to_matte;
use crate::metrics::{Matte, MetricReport};
use crate::model::AdaMatte;
use crate::synth::{generate_sequence, LabeledSequence};

use super::session::{bidirectional_infer, run_sequence, InitialMask};
use super::train::{matting_specs, TrainConfig};

/// Seed offset separating held-out scenes from training scenes.
pub const HELDOUT_SEED_OFFSET: u64 = 1_000_003;

/// The held-out set matching a training configuration: same count, length
/// and size, different scenes.
pub fn heldout_sequences(cfg: &TrainConfig) -> Result<Vec<LabeledSequence>> {
    matting_specs(
        cfg.seed + HELDOUT_SEED_OFFSET,
        cfg.sequences,
        cfg.frames,
        cfg.size,
    )
    .iter()
    .map(generate_sequence)
    .collect()
}

fn mattes(seq: &[adamatte_tensor::Tensor]) -> Result<Vec<Matte>> {
    seq.iter().map(to_matte).collect()
}

/// Forward (or bidirectional) inference on every sequence, one report each.
pub fn evaluate(
    model: &AdaMatte,
    sequences: &[LabeledSequence],
    init: &InitialMask,
    ablation: Ablation,
    bidirectional: bool,
    with_conn: bool,
) -> Result<Vec<MetricReport>> {
    sequences
        .iter()
        .map(|seq| {
            let mask = init.resolve(Some(&seq.alpha[0]))?;
            let alphas = if bidirectional {
                bidirectional_infer(model, &seq.frames, &mask, ablation)?
                    .reverse
                    .alphas
            } else {
                run_sequence(model, &seq.frames, &mask, ablation)?.alphas
            };
            MetricReport::compute(&mattes(&alphas)?, &mattes(&seq.alpha)?, with_conn)
        })
        .collect()
}

/// Mean MAD (×1e3) over sequences.
pub fn mean_mad(reports: &[MetricReport]) -> f64 {
    reports.iter().map(|r| r.mad).sum::<f64>() / reports.len().max(1) as f64
}
