//! Dense row-major CPU tensors with a reverse-mode gradient tape.
//!
//! Every tensor is an immutable value. Operations that consume a tensor which
//! requires gradients record a backward closure on the result, and
//! [`Tensor::backward`] walks that graph in reverse topological order.
//! The element type is generic over [`Scalar`] so that the same model code can
//! run in `f32` for training and in `f64` for finite-difference checks.

mod autograd;
mod error;
pub mod gradcheck;
mod ops;
mod param;
mod scalar;
mod tensor;

pub use autograd::{is_grad_enabled, no_grad};
pub use error::{Result, TensorError};
pub use ops::attention::{attention_probs, AttentionMask};
pub use ops::conv::Conv2dParams;
pub use ops::norm::BatchStats;
pub use param::{BufferId, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;
