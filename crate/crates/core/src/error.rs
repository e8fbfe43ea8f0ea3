use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HdError {
    #[error("invalid dimension {0}")]
    InvalidDimension(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("integer overflow while accumulating at element {index}")]
    Overflow { index: usize },
    #[error("similarity undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("class {class} has a zero-norm row")]
    ZeroNormRow { class: usize },
    #[error("invalid cutoff {0}; must be positive")]
    InvalidCutoff(f64),
    #[error("invalid count n = 0")]
    ZeroCount,
    #[error("invalid level count {0}; need at least 2")]
    InvalidLevels(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("expected {expected} features, got {got}")]
    FeatureCount { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("unsupported model file version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("digest mismatch: model file is corrupted")]
    Digest,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
