//! Reverse-mode automatic differentiation for small convolutional networks.
//!
//! The engine records a [`Graph`] of NCHW tensor operations while a model
//! runs forward, then sweeps it backwards to produce gradients for every
//! trainable leaf. It is generic over [`Real`] so the same model code runs
//! in `f32` for training and in `f64` for finite-difference checks.

mod graph;
mod ops;
mod real;
mod tensor;

pub use graph::{Gradients, Graph, NormMode, Var};
pub use ops::norm::BatchStats;
pub use real::{matmul, Real};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, Error>;
