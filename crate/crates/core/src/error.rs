//! Crate-wide error type.
//!
//! Variants are grouped by what went wrong rather than where: `Io`/`Parse`
//! for file trouble, `Validation` for structurally bad data, `InvalidArg`
//! for caller mistakes, `Numeric` for runtime numerical failures. The CLI
//! maps these groups onto distinct exit codes.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Structurally invalid data: missing control condition, ragged
    /// dimensions, asymmetric score entries, out-of-range ids.
    #[error("invalid data: {0}")]
    Validation(String),

    /// The caller asked for something impossible: k = 0, i == j,
    /// percentile outside (0, 100), unknown condition.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Numerical failure at runtime: non-finite loss, degenerate pools,
    /// all-coincident points.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
