//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records each operation together with a backward closure.
//! [`Tape::backward`] walks the record in exact reverse order and returns
//! [`Gradients`] for every node. The operation set is deliberately narrow:
//! embeddings, LSTM cells, convolution with global max pooling, dense
//! layers, ReLU, dropout, batch normalization and class-weighted
//! cross-entropy, which is all the four registered architectures use.
//!
//! Everything is generic over [`Scalar`](crate::scalar::Scalar); training
//! uses `f32` and [`gradcheck`] uses `f64`.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport, ParamError};
pub use ops::{BatchStats, BiLstmOutput, LstmVars};
pub use tape::{BackwardCtx, Gradients, Tape, Var};
pub use tensor::{argmax, softmax_rows, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },
    #[error("token id {id} out of range for table with {rows} rows")]
    IndexOutOfRange { id: usize, rows: usize },
    #[error("sequence {row} has true length 0")]
    ZeroLength { row: usize },
    #[error("sequence length {len} is shorter than kernel width {kernel}")]
    SequenceTooShort { len: usize, kernel: usize },
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("gradient check refused: the tape contains stochastic operations")]
    StochasticOp,
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
