use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("invalid shape {dims:?}: {reason}")]
    InvalidShape { dims: Vec<usize>, reason: String },

    #[error("{op}: {reason}")]
    Contract { op: &'static str, reason: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("channel constraint violated: {0}")]
    ChannelConstraint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad magic in tensor file (expected \"DTCT\")")]
    BadMagic,

    #[error("unsupported tensor file {what} {value}")]
    Unsupported { what: &'static str, value: u32 },

    #[error("truncated payload: header declares {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("extent overflow: declared extents {0:?} do not fit in memory")]
    ExtentOverflow(Vec<u32>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Contract {
            op,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
