//! A small differentiable-network engine: dense and 2-D convolution layers, the usual
//! activations, BCE/MSE losses, and SGD/Adam. Enough for every network in the crate and
//! nothing more.
//!
//! Models are plain values. Gradients are computed by explicit reverse passes and checked
//! against central finite differences in the tests.

mod layer;
mod loss;
mod model;
mod optim;

pub use layer::{sigmoid, softmax_in_place, Activation, LayerKind, LayerSpec, Padding};
pub use loss::{add_l2_gradient, loss_and_gradient, LossKind};
pub use model::{NetworkModel, Tensor};
pub use optim::{Direction, OptimizerKind, OptimizerState};

/// Uniform initialisation half-width used for every freshly built network.
pub const INIT_SCALE: f64 = 0.1;
