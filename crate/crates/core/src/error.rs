use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, got {got}")]
    Dimension {
        axis: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("parameter {index} has no gradient")]
    MissingGrad { index: usize },

    #[error("degenerate projection: depth {depth:e} is too close to zero")]
    DegenerateProjection { depth: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("singular matrix")]
    Singular,

    #[error("invalid camera: {0}")]
    Camera(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layout infeasible: {0}")]
    Layout(String),

    #[error("coverage: {0}")]
    Coverage(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown view id {0}")]
    UnknownView(usize),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(axis: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            axis: axis.into(),
            expected,
            got,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
