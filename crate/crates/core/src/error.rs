use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported format / decode failure: {0}")]
    Decode(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("no valid pixels: {0}")]
    NoValidPixels(String),

    #[error("all input vertices are collinear")]
    Collinear,

    #[error("constraint segment {0:?} crosses another constraint")]
    CrossingConstraints([usize; 2]),

    #[error("face {face} has non-positive inverse depth {inv_depth} at pixel ({x}, {y})")]
    NonPositiveDepth {
        face: usize,
        x: usize,
        y: usize,
        inv_depth: f64,
    },

    #[error("pixel ({x}, {y}) is not covered by any face")]
    Uncovered { x: usize, y: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code for this error: 2 for broken internal invariants,
    /// 1 for everything caused by the inputs.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::NonPositiveDepth { .. }
            | Error::Uncovered { .. }
            | Error::CrossingConstraints(_) => 2,
            _ => 1,
        }
    }
}
