use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: String,
        expected: usize,
        actual: usize,
    },

    #[error("shape {shape:?} does not match data length {len}")]
    ShapeData { shape: Vec<usize>, len: usize },

    #[error("input {actual_h}x{actual_w} is smaller than the minimum {min_h}x{min_w}")]
    InputTooSmall {
        min_h: usize,
        min_w: usize,
        actual_h: usize,
        actual_w: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("assignment needs at least as many candidates as references ({candidates} < {references})")]
    TooFewCandidates { candidates: usize, references: usize },

    #[error("target of length {target_len} needs at least {required} frames, got {frames}")]
    InfeasibleAlignment {
        target_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("instance too large for exhaustive enumeration ({0} paths)")]
    TooLarge(f64),

    #[error("symbol {0:?} is not in the alphabet")]
    UnknownSymbol(char),

    #[error("empty reference text")]
    EmptyReference,

    #[error("empty crop")]
    EmptyCrop,

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("{path}:{line}: {msg}")]
    ParseLine { path: PathBuf, line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("layout unsatisfiable after {0} attempts")]
    Layout(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(axis: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            axis: axis.into(),
            expected,
            actual,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
