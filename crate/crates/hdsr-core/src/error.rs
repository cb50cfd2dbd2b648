//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by the hdsr pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("glyph corpus incomplete: {0}")]
    CorpusIncomplete(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerics(String),

    #[error("target not representable by {frames} frames: {target}")]
    InfeasibleTarget { target: String, frames: usize },

    #[error("probability {0} outside the open interval (0,1)")]
    ProbabilityDomain(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
