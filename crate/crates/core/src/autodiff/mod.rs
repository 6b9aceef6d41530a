//! Dense tensors, a reverse-mode tape, parameter storage and Adam.

mod adam;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{glorot, ParameterStore};
pub use tape::{cosine, softmax_in_place, Segments, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected a scalar, got shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("{op}: index {index} out of bounds for {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: {messages} messages, {weights} weights and {segments} segment entries are misaligned")]
    Alignment {
        op: &'static str,
        messages: usize,
        weights: usize,
        segments: usize,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    Length { shape: Vec<usize>, len: usize },
    #[error("{0}: no inputs")]
    Empty(&'static str),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{0}` registered twice")]
    DuplicateParameter(String),
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("{0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
