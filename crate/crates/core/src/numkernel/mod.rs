//! Dense numeric substrate for the rankers: a row-major matrix type, a
//! reverse-mode tape over a handful of primitives, the encoder block built
//! from them, and a central-difference gradient checker.

mod attention;
mod gradcheck;
mod tape;
mod tensor;

pub use attention::{attention_block, BlockParamIndex};
pub use gradcheck::{grad_check, GradCheckReport, ABS_FLOOR};
pub use tape::{gelu, gelu_grad, softmax_in_place, Tape, Var};
pub use tensor::Tensor2;

pub(crate) use tape::COSINE_EPS;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite function value at probe coordinate {coordinate} of tensor {tensor}")]
    NonFiniteProbe { tensor: usize, coordinate: usize },
}

impl KernelError {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        KernelError::Shape { op, left, right }
    }
}

/// Numerically stable softmax of a vector.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}
