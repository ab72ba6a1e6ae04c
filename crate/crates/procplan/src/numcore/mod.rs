//! Minimal dense-f64 numerics: arrays, a reverse-mode tape, Adam, and a
//! finite-difference gradient checker.
//!
//! Scope is deliberately small — rank ≤ 2, f64 only, no broadcasting beyond
//! row-bias. Every op that can fail returns [`NumError`] instead of panicking
//! so callers can surface shape bugs as data errors rather than aborts.

mod adam;
mod array;
mod gradcheck;
mod tape;

pub use adam::AdamState;
pub use array::{cross_entropy, log_softmax, matmul, mse, softmax_rows, Array};
pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_FD_STEP, DEFAULT_FD_TOL};
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid shape in {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("target index {index} out of range for {classes} classes")]
    TargetOutOfRange { index: usize, classes: usize },
    #[error("softmax row {row} is entirely masked; no attendable position")]
    AllMasked { row: usize },
    #[error("non-finite value produced in {op}")]
    NonFinite { op: &'static str },
    #[error("gradient for parameter {param} contains NaN; refusing to update")]
    NanGradient { param: usize },
    #[error("{op} expects a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
}

impl NumError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NumError::ShapeMismatch { op, detail: detail.into() }
    }
    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        NumError::InvalidShape { op, detail: detail.into() }
    }
}
