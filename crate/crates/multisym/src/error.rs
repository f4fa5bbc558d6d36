//! Error type shared across the crate.
//!
//! Every variant maps to one of the process exit codes used by the CLI:
//! 1 for validation failures, 2 for IO errors, 3 for numerical aborts.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("format error in {path} at byte {offset}: {reason}")]
    Format {
        path: String,
        offset: u64,
        reason: String,
    },

    #[error("truncated payload in {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: String,
        expected: u64,
        actual: u64,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate embedding: projection norm {norm:.3e} below 1e-12")]
    DegenerateEmbedding { norm: f64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NumericalAbort { epoch: usize, batch: usize },

    #[error("ill-conditioned system: condition estimate {cond:.3e} exceeds {limit:.1e}")]
    IllConditioned { cond: f64, limit: f64 },

    #[error("duplicate registry entry: {0}")]
    DuplicateEntry(String),

    #[error("unknown registry entry: {0}")]
    UnknownEntry(String),
}

impl Error {
    /// Exit code the CLI maps this error onto.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format { .. } | Error::Truncated { .. } => 2,
            Error::NumericalAbort { .. } | Error::DegenerateEmbedding { .. } => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
