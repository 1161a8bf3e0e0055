//! Dense tensors and the reverse-mode tape every model computation runs on.

mod scalar;
mod serialize;
mod tape;
mod tensor;

pub use scalar::Scalar;
pub use serialize::{decode_tensor, encode_tensor, read_tensor, write_tensor, TENSOR_FORMAT_VERSION, TENSOR_MAGIC};
pub use tape::{BackwardPolicy, Tape, Var};
pub use tensor::{cosine, Tensor, COSINE_EPS};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} has a zero dimension")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{op}: empty index list")]
    EmptyIndex { op: &'static str },
    #[error("expected a single-element tensor, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("backward already ran on this tape; call reset_grads first")]
    BackwardTwice,
    #[error("tensor blob version {found} is not supported (expected {expected})")]
    Version { found: u8, expected: u8 },
    #[error("corrupt tensor blob: {0}")]
    Corrupt(String),
}
