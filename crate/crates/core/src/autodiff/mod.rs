//! Define-by-run reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tape`] is built fresh for every training step. Values enter it either
//! as tracked leaves ([`Tape::leaf`]) or as constants ([`Tape::constant`]).
//! Every primitive appends one node whose parents precede it, so the reverse
//! sweep in [`Tape::backward`] is a single pass over node indices in
//! descending order.
//!
//! ```
//! use hwm_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
//! let sq = tape.square(x).unwrap();
//! let y = tape.sum(sq).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
//! ```

mod broadcast;
mod tape;
mod tensor;

pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward root is not tracked on the tape")]
    UntrackedRoot,
    #[error("{op}: expected {expected} input(s), got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}
