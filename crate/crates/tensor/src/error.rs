use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("spatial size {height}x{width} is not divisible by patch size {patch}")]
    PatchMismatch {
        height: usize,
        width: usize,
        patch: usize,
    },
    #[error("axis {axis} out of range for a tensor of rank {rank}")]
    InvalidAxis { axis: isize, rank: usize },
    #[error("invalid backward: {0}")]
    InvalidBackward(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn mismatch(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
