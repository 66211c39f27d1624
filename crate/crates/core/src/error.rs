use thiserror::Error;

pub type Result<T, E = AlignError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("empty input: {n_frames} frames, {n_tokens} tokens")]
    EmptyInput { n_frames: usize, n_tokens: usize },

    #[error("too few frames: {n_frames} frames cannot cover {n_tokens} tokens")]
    TooFewFrames { n_frames: usize, n_tokens: usize },

    #[error("enumeration budget exceeded: {paths} paths > {budget}")]
    BudgetExceeded { paths: u128, budget: u128 },

    #[error("path mismatch: {0}")]
    PathMismatch(String),

    #[error("numerical underflow in scaling vectors after {iteration} iterations")]
    NumericalUnderflow { iteration: usize },

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("embedding dimension {dim} is smaller than the token count {n_tokens}")]
    DimensionTooSmall { dim: usize, n_tokens: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),
}
