//! Model, memory and ablation configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Output widths at 1/2, 1/4, 1/8 and 1/16 scale.
    pub channels: [usize; 4],
    /// Width of the reduced 1/16 feature fed to the transformer.
    pub hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: [16, 24, 32, 96],
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    /// MLP hidden width as a multiple of the model width.
    pub mlp_ratio: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            heads: 4,
            mlp_ratio: 4,
        }
    }
}

/// When the long-term compartment is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LongTermCadence {
    /// Written every `long_stride` frames, read every frame.
    #[default]
    SparseWrites,
    /// Written every frame, read only every `long_stride` frames.
    SparseReads,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    /// Maximum number of long-term entries.
    pub long_capacity: usize,
    /// Frame stride of the long-term compartment.
    pub long_stride: usize,
    /// Number of short-term entries (temporal extent of the tube).
    pub short_capacity: usize,
    /// Spatial side of the short-term window, odd.
    pub window: usize,
    pub cadence: LongTermCadence,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            long_capacity: 10,
            long_stride: 10,
            short_capacity: 1,
            window: 7,
            cadence: LongTermCadence::SparseWrites,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Output widths of the four upscaling blocks (1/16 -> 1/8 -> 1/4 -> 1/2 -> 1/1).
    pub widths: [usize; 4],
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            widths: [64, 32, 32, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub transformer: TransformerConfig,
    pub memory: MemoryConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let t = &self.transformer;
        let m = &self.memory;
        let positive = e
            .channels
            .iter()
            .chain(&self.decoder.widths)
            .all(|&c| c > 0)
            && e.hidden > 0
            && t.layers > 0
            && t.mlp_ratio > 0
            && m.long_capacity > 0
            && m.long_stride > 0
            && m.short_capacity > 0;
        if !positive {
            return Err(Error::Config(
                "all widths, counts and capacities must be positive".into(),
            ));
        }
        if t.heads == 0 || e.hidden % t.heads != 0 {
            return Err(Error::Config(format!(
                "hidden width {} is not divisible by {} heads",
                e.hidden, t.heads
            )));
        }
        if m.window % 2 == 0 {
            return Err(Error::Config(format!(
                "short-term window {} must be odd",
                m.window
            )));
        }
        Ok(())
    }
}

/// Which attention terms contribute to the fused transformer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    #[default]
    Both,
    ShortOnly,
    LongOnly,
}

/// Which signal drives the Fg/Bg embedding of stored values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// The decoder's Fg/Bg mask prediction.
    #[default]
    Mask,
    /// The binarized fine alpha prediction.
    Alpha,
    /// No embedding; raw values are stored.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Ablation {
    pub attention: AttentionMode,
    pub update: UpdateMode,
}

impl AttentionMode {
    pub fn uses_long(self) -> bool {
        self != AttentionMode::ShortOnly
    }

    pub fn uses_short(self) -> bool {
        self != AttentionMode::LongOnly
    }
}
