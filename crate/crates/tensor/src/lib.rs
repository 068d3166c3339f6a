//! Minimal dense tensors with tape-based reverse-mode automatic
//! differentiation.
//!
//! Training math runs in `f64`; checkpoints are stored as `f32`.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use optim::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
