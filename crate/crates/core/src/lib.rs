//! Sparse attention lab.
//!
//! Softmax, sparsemax and entmax attention as interchangeable normalizers
//! inside a local self-attention classifier and a hierarchical transformer,
//! with the autodiff, data, training and evaluation machinery around them.

pub mod attention;
#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod rng;
pub mod simplex;
pub mod train;

pub use error::{Error, Result};
pub use simplex::{MappingKind, ProbabilityVector};
