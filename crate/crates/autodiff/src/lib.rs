//! Dense-tensor arithmetic with reverse-mode automatic differentiation.
//!
//! Values are 64-bit floats throughout. Build a [`Graph`] per forward pass,
//! bring parameters in with [`Graph::param`], call [`Graph::backward_into`]
//! on the scalar loss, then [`Adam::step`].

mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod tensor;

pub use error::{AutodiffError, Result};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig, OptimizerState, StepLr};
pub use params::{NamedTensor, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
