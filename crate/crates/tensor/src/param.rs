use std::collections::HashMap;
use std::sync::Mutex;

use crate::error::{dim_err, Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
}

#[derive(Debug)]
struct Buffer<T> {
    name: String,
    shape: Vec<usize>,
    data: Mutex<Vec<T>>,
}

/// Owns the trainable parameters and non-trainable buffers of a model.
///
/// Names are dotted paths and unique across parameters and buffers. Buffers
/// (e.g. running statistics) use interior mutability so that a forward pass
/// can update them through a shared reference.
#[derive(Debug, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Parameter<T>>,
    buffers: Vec<Buffer<T>>,
    names: HashMap<String, ()>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
        }
    }

    fn claim(&mut self, name: &str) -> Result<()> {
        if self.names.insert(name.to_owned(), ()).is_some() {
            return Err(TensorError::DuplicateName(name.to_owned()));
        }
        Ok(())
    }

    pub fn add_param(&mut self, name: &str, shape: &[usize], data: Vec<T>) -> Result<ParamId> {
        let tensor = Tensor::parameter(shape, data)?;
        self.claim(name)?;
        self.params.push(Parameter {
            name: name.to_owned(),
            tensor,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: &str, shape: &[usize], data: Vec<T>) -> Result<BufferId> {
        if numel(shape) != data.len() {
            return dim_err(
                "add_buffer",
                format!("{name}: {shape:?} vs {} values", data.len()),
            );
        }
        self.claim(name)?;
        self.buffers.push(Buffer {
            name: name.to_owned(),
            shape: shape.to_vec(),
            data: Mutex::new(data),
        });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    /// Position of the parameter called `name`.
    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Position of the buffer called `name`.
    pub fn find_buffer(&self, name: &str) -> Option<usize> {
        self.buffers.iter().position(|b| b.name == name)
    }

    /// Replaces the values of parameter `index` (position in [`Self::params`]).
    /// The previous tensor and its gradient are dropped.
    pub fn set_param_data(&mut self, index: usize, data: Vec<T>) -> Result<()> {
        let p = &mut self.params[index];
        p.tensor = Tensor::parameter(p.tensor.shape(), data)?;
        Ok(())
    }

    pub fn buffer(&self, id: BufferId) -> Vec<T> {
        self.buffers[id.0]
            .data
            .lock()
            .expect("buffer lock poisoned")
            .clone()
    }

    pub fn update_buffer(&self, id: BufferId, f: impl FnOnce(&mut [T])) {
        let mut guard = self.buffers[id.0]
            .data
            .lock()
            .expect("buffer lock poisoned");
        f(&mut guard);
    }

    /// `(name, shape, values)` for every buffer, in registration order.
    pub fn buffers(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        self.buffers
            .iter()
            .map(|b| {
                let data = b.data.lock().expect("buffer lock poisoned").clone();
                (b.name.clone(), b.shape.clone(), data)
            })
            .collect()
    }

    pub fn set_buffer_data(&self, index: usize, data: Vec<T>) -> Result<()> {
        let b = &self.buffers[index];
        if data.len() != numel(&b.shape) {
            return dim_err(
                "set_buffer_data",
                format!("{}: {} values", b.name, data.len()),
            );
        }
        *b.data.lock().expect("buffer lock poisoned") = data;
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(|p| p.tensor.zero_grad());
    }

    /// Total number of trainable scalars.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }
}
