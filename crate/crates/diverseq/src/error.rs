//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by sequence, kernel, and sampler operations.
#[derive(Error, Debug)]
pub enum Error {
    #[error("frame dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("sequence must contain at least one frame")]
    EmptySequence,

    #[error("{what} must be finite")]
    NonFinite { what: &'static str },

    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),

    #[error("{what}: expected {expected}, got {actual}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("index {index} out of range for ground set of size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate index {index} in index set")]
    DuplicateIndex { index: usize },

    #[error("index {index} intersects the conditioned set")]
    IntersectsConditioned { index: usize },

    #[error("quality weight must be positive, got {0}")]
    InvalidQualityWeight(f64),

    #[error("kernel is not positive semi-definite: min eigenvalue {min_eigenvalue:.3e}")]
    NotPsd { min_eigenvalue: f64 },

    #[error(
        "matrix is ill-conditioned: cond {condition:.3e} (eigenvalues in [{lambda_min:.3e}, {lambda_max:.3e}])"
    )]
    IllConditioned {
        condition: f64,
        lambda_min: f64,
        lambda_max: f64,
    },

    #[error("requested cardinality {k} exceeds numerical rank {rank}")]
    RankExceeded { k: usize, rank: usize },

    #[error("all single-item minors are singular: candidate set is degenerate")]
    DegenerateCandidates,

    #[error("submatrix is singular")]
    SingularMinor,

    #[error("no word reaches prominence threshold {threshold}; fall back to fixed-length segmentation")]
    NoProminentWord { threshold: f64 },

    #[error("sigma_p requires scalar frames (d = 1), got d = {dim}")]
    ScalarFramesRequired { dim: usize },

    #[error("batch sequences must have equal lengths: {left} vs {right}")]
    UnequalLengths { left: usize, right: usize },

    #[error("sequence {id:?} has zero norm")]
    ZeroNorm { id: String },

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
