//! Inference sessions, training and checkpoints.

pub mod checkpoint;
pub mod eval;
pub mod optim;
mod session;
pub mod train;

pub use session::{
    bidirectional_infer, downsample_to_grid, run_sequence, BidirectionalOutput, InitialMask,
    SequenceOutput, Session,
};
