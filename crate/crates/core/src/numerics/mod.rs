//! Dense `f64` matrices, a define-by-run reverse-mode gradient tape, finite
//! difference gradient checking and the Adam optimizer.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! return lightweight [`Tensor`] handles; [`Tape::backward`] walks the record
//! in reverse and accumulates gradients for every tensor that requires them.

mod adam;
mod gradcheck;
mod matrix;
mod segments;
mod tape;

pub use adam::{Adam, AdamConfig, AdamState};
pub use gradcheck::{grad_check, CoordinateIssue, GradCheckConfig, GradCheckReport};
pub use matrix::Matrix;
pub use segments::Segments;
pub use tape::{sigmoid, Tape, Tensor};

use thiserror::Error;

pub type Shape = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Shape, right: Shape },
    #[error("data length {len} does not match shape ({rows}, {cols})")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("{op}: softmax over an empty segment")]
    EmptySegment { op: &'static str },
    #[error("invalid segment layout: {0}")]
    InvalidSegments(String),
    #[error("{op}: index {index} out of range for {bound} rows")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("backward requires a 1x1 loss, got {shape:?}")]
    NotScalar { shape: Shape },
    #[error("backward already ran on this tape; call zero_grad first")]
    BackwardTwice,
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("parameter `{param}`: {detail}")]
    ParamMismatch { param: String, detail: String },
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, left: Shape, right: Shape) -> Self {
        NumericsError::ShapeMismatch { op, left, right }
    }
}
