//! Dense `f64` tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;


pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use params::{glorot_uniform, normal_init, ParamId, ParamStore, Parameter};
pub use tape::{smax_kernel, Gradients, Mode, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: invalid argument ({detail})")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter {0:?}")]
    NonFiniteGradient(String),
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("incompatible checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
}

impl TensorError {
    /// True for failures caused by numerics rather than bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::NonFinite { .. } | Self::NonFiniteGradient(_))
    }
}
