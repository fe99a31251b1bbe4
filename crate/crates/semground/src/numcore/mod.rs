//! Minimal dense numeric kernel.
//!
//! Everything here works on `f64`; gradient checks at the tolerances used by
//! the test suite are not reliable in single precision. The module provides
//! exactly the forward and backward kernels the grounding model composes,
//! plus Adam and a central-difference gradient checker. It is not a general
//! autodiff system.

mod adam;
mod gradcheck;
mod kernels;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use kernels::{
    affine_backward, affine_backward_input, affine_backward_params, col_scale,
    col_scale_backward, matvec_backward, relu_backward, softmax_backward,
    softmax_cross_entropy_backward,
};
pub use tensor::{affine, cross_entropy, matvec, relu, softmax, Tensor2, PROB_FLOOR};

use thiserror::Error;

/// Errors raised by the numeric kernel.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumError {
    /// Two operands have incompatible shapes; both are named with their dims.
    #[error("{op}: {left} is {left_rows}x{left_cols} but {right} is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left: &'static str,
        left_rows: usize,
        left_cols: usize,
        right: &'static str,
        right_rows: usize,
        right_cols: usize,
    },
    /// A flat array has the wrong length for the operation.
    #[error("{op}: expected length {expected}, got {actual}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        actual: usize,
    },
    /// An index is out of range.
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    /// A value that must be finite is NaN or infinite.
    #[error("{context}: non-finite value at index {index}")]
    NonFinite { context: String, index: usize },
    /// An argument violates a documented precondition.
    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },
}
