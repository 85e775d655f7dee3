//! Dense tensors and a reverse-mode gradient tape.
//!
//! A [`Graph`] records every primitive applied to its [`Var`] handles; calling
//! [`Graph::backward`] on a scalar node sweeps the record in reverse and
//! accumulates gradients into the trainable leaves. All arithmetic is `f64`.

mod check;
mod graph;
mod tensor;

pub use check::{finite_difference_check, GradCheck};
pub use graph::{Graph, ReduceKind, Var, MASK_NEG};
pub use tensor::{broadcast_shape, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op} needs a higher-rank input (got rank {rank})")]
    RankTooLow { op: &'static str, rank: usize },
    #[error("slice [{start}, {start}+{len}) on axis {axis} is out of range for shape {shape:?}")]
    SliceOutOfRange {
        shape: Vec<usize>,
        axis: usize,
        start: usize,
        len: usize,
    },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}
