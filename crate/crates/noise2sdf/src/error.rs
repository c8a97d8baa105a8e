//! Error type shared by the whole crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file could not be parsed.
    #[error("parse error in {path} (line {line}): {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A binary file failed its integrity checks (bad magic, truncated
    /// payload, checksum mismatch).
    #[error("corrupt file: {0}")]
    CorruptFile(String),

    /// A file carries a format version this build does not understand.
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    /// The auction solver did not reach a complete assignment within its
    /// bid budget.
    #[error("assignment approximation did not converge within {bids} bids")]
    ApproximationFailed { bids: u64 },

    /// Training or optimization produced a non-finite or diverging value.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
