use std::path::PathBuf;

use thiserror::Error;

use crate::metrics::MetricId;

pub type Result<T, E = SpeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SpeError {
    #[error("cannot read {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    /// An adapter or plugin broke its input/output contract.
    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("checkpoint {locator} could not be used: {reason}")]
    Plugin { locator: String, reason: String },

    #[error("reference segmenter failed: {reason}{}", fmt_stderr(.stderr))]
    Reference { reason: String, stderr: String },

    #[error("{metric} set score is undefined at epoch {epoch}")]
    UndefinedScore { epoch: u32, metric: MetricId },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("mapping fit failed: {0}")]
    Fit(String),

    #[error("input outside mapping domain: {0}")]
    Domain(String),

    #[error("synthetic harness: {0}")]
    Harness(String),

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("cannot parse {what}: {reason}")]
    Parse { what: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_stderr(stderr: &str) -> String {
    let trimmed = stderr.trim();
    if trimmed.is_empty() {
        String::new()
    } else {
        format!(" (stderr: {trimmed})")
    }
}

impl SpeError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        SpeError::Validation(msg.into())
    }

    pub(crate) fn ingestion(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        SpeError::Ingestion {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
