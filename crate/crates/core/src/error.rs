use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ZeroRegError>;

#[derive(Debug, Error)]
pub enum ZeroRegError {
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed bundle at {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("zero-norm vector: {0}")]
    ZeroVector(String),
    #[error("no object survived multi-view filtering")]
    EmptyScene,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("instance too large for exact enumeration: {size} > {limit}")]
    SizeLimit { size: usize, limit: usize },
    #[error("non-finite value in {0}")]
    Numerical(String),
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),
    #[error("no consensus: best hypothesis has zero inliers")]
    NoConsensus,
    #[error("no visible points to render")]
    EmptyRender,
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ZeroRegError>,
    },
}

impl ZeroRegError {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad inputs rather than a failed computation.
    pub fn is_input_error(&self) -> bool {
        match self {
            Self::Format { .. } | Self::Validation { .. } | Self::Config(_) => true,
            Self::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
