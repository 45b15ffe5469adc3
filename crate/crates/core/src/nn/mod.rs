//! Minimal differentiable kernel: dense/conv/transposed-conv/batch-norm
//! layers, activations, reverse-mode gradients over layer chains, and Adam.
//!
//! All arithmetic is `f64`. Images are NHWC.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod layer;
pub mod tensor;

pub use activation::Activation;
pub use adam::{Adam, AdamConfig};
pub use batchnorm::BatchNorm;
pub use conv::{ConvGeometry, Padding};
pub use layer::{Gradients, Layer, Loss, Sequential, Tape};
pub use tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{op}: {axis} mismatch (expected {expected}, got {actual})")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("configuration: {0}")]
    Config(String),
    #[error("batch normalization over a single value with eps = 0")]
    DegenerateBatch,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
