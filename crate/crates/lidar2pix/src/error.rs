use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    #[error("degenerate point: range must be > 0")]
    DegeneratePoint,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("scene placement failed after {retries} retries; parameters too dense")]
    PlacementFailed { retries: usize },

    #[error("channel mode mismatch: dataset is {dataset}, requested {requested}")]
    ModeMismatch { dataset: String, requested: String },

    #[error("non-finite loss at epoch {epoch}, sample {sample}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        sample: usize,
        detail: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no pair has a positive ground-truth car count; score undefined")]
    UndefinedScore,

    #[error("parse error in {path}: {why}")]
    Parse { path: PathBuf, why: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, why: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            why: why.into(),
        }
    }

    pub fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
