use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed or inconsistent dataset/checkpoint file.
    #[error("{}:{line}: {msg}", file.display())]
    Load {
        file: PathBuf,
        line: u64,
        msg: String,
    },

    /// A loss term or gradient became NaN or infinite.
    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn load(file: impl Into<PathBuf>, line: u64, msg: impl Into<String>) -> Self {
        Error::Load {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
