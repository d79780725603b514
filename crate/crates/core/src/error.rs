use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across feature extraction, training and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported audio encoding in {path}: {detail}")]
    UnsupportedCodec { path: PathBuf, detail: String },

    #[error("audio file {0} contains no samples")]
    EmptyAudio(PathBuf),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input too short: need at least {needed} {unit}, got {got}")]
    TooShort {
        needed: usize,
        got: usize,
        unit: &'static str,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("target of length {target_len} needs at least {required} frames, posteriorgram has {frames}")]
    CtcInfeasible {
        target_len: usize,
        required: usize,
        frames: usize,
    },

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),

    #[error("unknown feature kind {0:?}")]
    UnknownFeature(String),

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("manifest {path}, line {line}: {detail}")]
    Manifest {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("duplicate track id {id:?} on lines {first} and {second}")]
    DuplicateTrack {
        id: String,
        first: usize,
        second: usize,
    },

    #[error("missing files referenced by manifest: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),

    #[error("unknown track id {0:?}")]
    UnknownTrack(String),

    #[error("no valid queries: every work has a single track")]
    NoQueries,

    #[error("cannot mine triplets: batch contains a single work")]
    SingleWorkBatch,

    #[error("not enough works: need {needed} works with at least two tracks, found {found}")]
    NotEnoughWorks { needed: usize, found: usize },

    #[error("{0}")]
    Missing(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
