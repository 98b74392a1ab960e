use std::collections::VecDeque;

use adamatte_tensor::{Scalar, Tensor};

use crate::config::{LongTermCadence, MemoryConfig};
use crate::error::{Error, Result};

/// Key and (embedded) value tokens of one transformer layer, `P×C` each.
#[derive(Debug, Clone)]
pub struct KeyValue<T: Scalar = f32> {
    pub key: Tensor<T>,
    pub value: Tensor<T>,
}

/// Everything stored for one frame: a key/value pair per transformer layer.
#[derive(Debug, Clone)]
pub struct MemoryEntry<T: Scalar = f32> {
    pub frame: usize,
    pub layers: Vec<KeyValue<T>>,
}

/// Two FIFO compartments of key/value entries, ordered oldest to newest.
///
/// The short-term compartment receives every write; the long-term one only
/// frames that are multiples of the stride (or every frame under
/// [`LongTermCadence::SparseReads`]). Writing a frame index equal to the
/// newest entry's replaces that entry, which is how the frame-0 entry built
/// from the initial mask gets superseded by the decoder's own prediction.
#[derive(Debug, Clone)]
pub struct MemoryBank<T: Scalar = f32> {
    cfg: MemoryConfig,
    grid: Option<(usize, usize)>,
    long: VecDeque<MemoryEntry<T>>,
    short: VecDeque<MemoryEntry<T>>,
    writes: usize,
}

fn push<T: Scalar>(fifo: &mut VecDeque<MemoryEntry<T>>, entry: MemoryEntry<T>, capacity: usize) {
    match fifo.back_mut() {
        Some(last) if last.frame == entry.frame => *last = entry,
        _ => {
            fifo.push_back(entry);
            while fifo.len() > capacity {
                fifo.pop_front();
            }
        }
    }
}

impl<T: Scalar> MemoryBank<T> {
    pub fn new(cfg: MemoryConfig) -> Self {
        Self {
            cfg,
            grid: None,
            long: VecDeque::new(),
            short: VecDeque::new(),
            writes: 0,
        }
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.cfg
    }

    /// Spatial grid `(h, w)` of the stored tokens, fixed by the first write.
    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    pub fn long(&self) -> &VecDeque<MemoryEntry<T>> {
        &self.long
    }

    pub fn short(&self) -> &VecDeque<MemoryEntry<T>> {
        &self.short
    }

    pub fn long_frames(&self) -> Vec<usize> {
        self.long.iter().map(|e| e.frame).collect()
    }

    pub fn short_frames(&self) -> Vec<usize> {
        self.short.iter().map(|e| e.frame).collect()
    }

    /// Number of write calls so far.
    pub fn writes(&self) -> usize {
        self.writes
    }

    pub fn is_empty(&self) -> bool {
        self.long.is_empty() && self.short.is_empty()
    }

    /// Whether frame `frame` reads the long-term compartment.
    pub fn reads_long(&self, frame: usize) -> bool {
        match self.cfg.cadence {
            LongTermCadence::SparseWrites => true,
            LongTermCadence::SparseReads => frame % self.cfg.long_stride == 0,
        }
    }

    fn check_entry(&self, grid: (usize, usize), layers: &[KeyValue<T>]) -> Result<()> {
        let p = grid.0 * grid.1;
        let first = layers
            .first()
            .ok_or_else(|| Error::Contract("memory entry has no layers".into()))?;
        let shape = first.key.shape().to_vec();
        if shape.len() != 2 || shape[0] != p {
            return Err(Error::Dimension(format!(
                "memory keys {shape:?} do not match grid {grid:?}"
            )));
        }
        if layers
            .iter()
            .any(|kv| kv.key.shape() != shape || kv.value.shape() != shape)
        {
            return Err(Error::Dimension(
                "memory keys and values differ in shape".into(),
            ));
        }
        let existing = self.short.back().or(self.long.back());
        if let Some(e) = existing {
            if self.grid != Some(grid)
                || e.layers.len() != layers.len()
                || e.layers[0].key.shape() != shape
            {
                return Err(Error::Dimension(format!(
                    "entry with grid {grid:?} and {} layers of {shape:?} does not match the bank",
                    layers.len()
                )));
            }
        }
        Ok(())
    }

    pub fn write(
        &mut self,
        frame: usize,
        grid: (usize, usize),
        layers: Vec<KeyValue<T>>,
    ) -> Result<()> {
        self.check_entry(grid, &layers)?;
        self.grid = Some(grid);
        let entry = MemoryEntry { frame, layers };
        let to_long = match self.cfg.cadence {
            LongTermCadence::SparseWrites => frame % self.cfg.long_stride == 0,
            LongTermCadence::SparseReads => true,
        };
        if to_long {
            push(&mut self.long, entry.clone(), self.cfg.long_capacity);
        }
        push(&mut self.short, entry, self.cfg.short_capacity);
        self.writes += 1;
        Ok(())
    }

    /// Cuts every stored tensor from the gradient tape.
    pub fn detach(&mut self) {
        for e in self.long.iter_mut().chain(self.short.iter_mut()) {
            for kv in &mut e.layers {
                kv.key = kv.key.detach();
                kv.value = kv.value.detach();
            }
        }
    }
}
