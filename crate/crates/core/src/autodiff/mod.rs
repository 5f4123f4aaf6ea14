//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamError, Moments};
pub use params::{glorot, uniform, Param, ParamId, ParamStore};
pub use tape::{sigmoid, Elementwise, Gradients, ParamGrads, Tape, Var};
pub use tensor::{Tensor, TensorError};
