//! Tape-based autodiff, layers, loss, optimizer and checkpoints.

mod adam;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use graph::{AttentionCapture, Gradients, Graph, Var, MASK_FILL};
pub(crate) use graph::sigmoid;
pub use params::{Params, CHECKPOINT_MAGIC};
pub use tensor::Tensor;

/// Layer-norm epsilon used throughout the models.
pub const LAYER_NORM_EPS: f64 = 1e-5;
