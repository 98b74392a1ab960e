//! Video human matting with a Fg/Bg-guided key/value memory.
//!
//! A small convolutional encoder feeds a transformer whose attention reads
//! a bounded memory of earlier frames (dense over a long-term store, windowed
//! over the most recent frames). Stored values carry a learned foreground or
//! background embedding selected by the decoder's own mask prediction, and
//! the decoder refines a coarse 1/4-scale alpha into a full-resolution one.

pub mod config;
pub mod decoder;
pub mod encoder;
mod error;
pub mod fgbg;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synth;

pub use config::{Ablation, AttentionMode, LongTermCadence, MemoryConfig, ModelConfig, UpdateMode};
pub use decoder::{mask_to_guidance, DecoderOutputs};
pub use encoder::FramePyramid;
pub use error::{Error, Result};
pub use model::{AdaMatte, FrameOutput};
pub use nn::Mode;
pub use pipeline::{run_sequence, InitialMask, Session};
