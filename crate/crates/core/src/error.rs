use thiserror::Error;

/// Errors produced by the modelling pipeline.
#[derive(Error, Debug)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    /// A greedy route could not reach its target. Callers retry with fresh
    /// endpoints before giving up on the sample.
    #[error("route construction failed")]
    RouteFailed,

    #[error("sample generation failed: {0}")]
    SampleFailed(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
