//! Dense `f64` tensors with tape-based reverse-mode gradients.

mod gradcheck;
mod graph;
pub mod ops;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_error, finite_diff_error_fourth_order, REL_ERROR_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use ops::{layer_norm, masked_cross_entropy, matmul, matmul_nt, softmax_rows};
pub use tensor::{Mask, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("softmax row {row} has every entry masked")]
    AllMaskedRow { row: usize },
    #[error("every position is masked out of the loss")]
    EmptyTarget,
    #[error("target id {target} outside vocabulary of {vocab}")]
    TargetOutOfRange { target: usize, vocab: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
}
