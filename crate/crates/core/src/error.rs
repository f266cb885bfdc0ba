use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("optimization diverged at level {level}, iteration {iteration} (loss = {loss})")]
    Divergence {
        level: usize,
        iteration: usize,
        loss: f64,
    },

    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },

    #[error(
        "truncated payload: expected {expected} bytes, found {found} (missing payload byte {missing_byte})"
    )]
    Truncated {
        expected: usize,
        found: usize,
        /// 1-based index of the first payload byte that is absent.
        missing_byte: usize,
    },

    #[error("dtype mismatch: role `{role}` cannot be stored as `{dtype}`")]
    DtypeMismatch { role: String, dtype: String },

    #[error("value {value} at voxel {index} (byte {offset}) is outside [0, 1]")]
    RangeViolation { index: usize, offset: usize, value: f64 },

    #[error("non-finite value at voxel {index} (byte {offset})")]
    NonFinite { index: usize, offset: usize },

    #[error("unsupported file: {field}: {detail}")]
    Unsupported { field: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
