use std::path::PathBuf;

use crate::network::ViewNetwork;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Sizing(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a non-finite loss. Carries the parameters from the
    /// last epoch that finished with finite values.
    #[error("training diverged in {phase} phase at epoch {epoch}")]
    Diverged {
        phase: String,
        epoch: usize,
        last_good: Box<Vec<ViewNetwork>>,
    },
}

impl Error {
    pub(crate) fn sizing(msg: impl Into<String>) -> Self {
        Error::Sizing(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
