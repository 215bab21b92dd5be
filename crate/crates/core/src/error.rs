use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corrupt parameter file: {0}")]
    Format(String),

    #[error("vocabulary hash mismatch: file has {stored}, dataset has {actual}")]
    VocabMismatch { stored: String, actual: String },

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
