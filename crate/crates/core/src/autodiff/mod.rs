//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! sweeps it in reverse insertion order, accumulating gradients by sum where
//! a node feeds several consumers. Non-differentiable points use fixed
//! subgradients: 0 for `relu` at 0 and for `norm_last` at the zero vector,
//! and the earliest arg-min/arg-max for `min_last`/`max_last`.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{sigmoid, softmax_row, Gradients, NodeId, Tape};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("domain error: {0}")]
    DomainError(&'static str),
    #[error("backward needs a one-element output, got shape {0:?}")]
    NotScalarOutput(Vec<usize>),
    #[error("{0}: non-finite value")]
    NonFinite(&'static str),
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
