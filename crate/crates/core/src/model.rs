//! The full network: encoder, Fg/Bg transformer and decoder over one
//! parameter store.

use adamatte_tensor::{ParamStore, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{AttentionMode, ModelConfig};
use crate::decoder::{Decoder, DecoderOutputs};
use crate::encoder::{Encoder, FramePyramid};
use crate::error::Result;
use crate::fgbg::{
    from_tokens, to_tokens, Context, FgBgTransformer, KeyValue, MemoryBank, MemoryRead,
};
use crate::nn::Mode;

#[derive(Debug)]
pub struct AdaMatte<T: Scalar = f32> {
    config: ModelConfig,
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub transformer: FgBgTransformer,
    pub decoder: Decoder,
}

/// Result of running one frame through the network.
#[derive(Debug, Clone)]
pub struct FrameOutput<T: Scalar = f32> {
    pub outputs: DecoderOutputs<T>,
    /// Raw key/value of each transformer layer for this frame.
    pub memory: Vec<KeyValue<T>>,
    /// Token grid `(H/16, W/16)`.
    pub grid: (usize, usize),
}

impl<T: Scalar> AdaMatte<T> {
    /// Builds a model with parameters drawn from a seeded generator.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &mut rng, &config.encoder)?;
        let transformer = FgBgTransformer::new(&mut store, &mut rng, &config)?;
        let decoder = Decoder::new(&mut store, &mut rng, &config)?;
        Ok(Self {
            config,
            store,
            encoder,
            transformer,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn new_bank(&self) -> MemoryBank<T> {
        MemoryBank::new(self.config.memory.clone())
    }

    /// Encoder pyramid and the reduced 1/16 feature.
    pub fn encode(&self, frame: &Tensor<T>, mode: Mode) -> Result<(FramePyramid<T>, Tensor<T>)> {
        let pyramid = self.encoder.extract_features(&self.store, frame, mode)?;
        let z = self
            .encoder
            .reduce_channels(&self.store, &pyramid.f_sixteenth)?;
        Ok((pyramid, z))
    }

    /// Key/value entry seeding an empty memory from `frame`: every layer
    /// attends to the frame's own keys and values, the latter embedded with
    /// `mask` (one value per 1/16-scale token) unless it is `None`.
    pub fn initial_memory(
        &self,
        frame: &Tensor<T>,
        mask: Option<&Tensor<T>>,
        attention: AttentionMode,
        mode: Mode,
    ) -> Result<(Vec<KeyValue<T>>, (usize, usize))> {
        let (_, z) = self.encode(frame, mode)?;
        let grid = (z.shape()[1], z.shape()[2]);
        let context = Context::Own {
            grid,
            window: self.config.memory.window,
            mode: attention,
            mask,
            embeddings: self.transformer.embeddings(&self.store),
        };
        let out = self
            .transformer
            .forward(&self.store, &to_tokens(&z)?, context)?;
        let memory = self
            .transformer
            .embed_memory(&self.store, &out.memory, mask)?;
        Ok((memory, grid))
    }

    /// Full forward pass of frame `frame_index` against `bank`.
    pub fn forward_frame(
        &self,
        frame: &Tensor<T>,
        bank: &MemoryBank<T>,
        frame_index: usize,
        attention: AttentionMode,
        mode: Mode,
    ) -> Result<FrameOutput<T>> {
        let (pyramid, z) = self.encode(frame, mode)?;
        let grid = (z.shape()[1], z.shape()[2]);
        let read = MemoryRead {
            bank,
            frame: frame_index,
            mode: attention,
        };
        let out = self
            .transformer
            .forward(&self.store, &to_tokens(&z)?, Context::Memory(read))?;
        let z_prime = from_tokens(&out.z, grid.0, grid.1)?;
        let outputs = self.decoder.decode(&self.store, &z_prime, &pyramid, mode)?;
        Ok(FrameOutput {
            outputs,
            memory: out.memory,
            grid,
        })
    }

    /// Copies parameters and buffers into a model of another precision.
    pub fn cast<U: Scalar>(&self) -> Result<AdaMatte<U>> {
        let mut other = AdaMatte::<U>::new(self.config.clone(), 0)?;
        for (i, p) in self.store.params().iter().enumerate() {
            other
                .store
                .set_param_data(i, p.tensor.cast::<U>().to_vec())?;
        }
        for (i, (_, _, data)) in self.store.buffers().into_iter().enumerate() {
            other
                .store
                .set_buffer_data(i, data.iter().map(|v| U::of(v.as_f64())).collect())?;
        }
        Ok(other)
    }
}
