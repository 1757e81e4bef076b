use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::corpus::CorpusError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{path}: {source}")]
    Corpus { path: PathBuf, source: CorpusError },
    #[error(transparent)]
    Format(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("sentence lacks the {0} annotation layer")]
    MissingAnnotation(&'static str),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("evaluation undefined: {0}")]
    Evaluation(String),
    #[error("training diverged at epoch {epoch}, sentence {sentence}: {source}")]
    Divergence {
        epoch: usize,
        sentence: usize,
        source: AutodiffError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite arithmetic rather than data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::Autodiff(AutodiffError::NonFinite { .. })
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
