use std::path::PathBuf;

use thiserror::Error;

use crate::track::TrackError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid track: {0}")]
    Track(#[from] TrackError),

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("track too short: need at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("distance must be nonnegative, got {0}")]
    NegativeDistance(f64),

    #[error("empty input set")]
    EmptySet,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidSpec(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("gap of {gap} frames after frame {after} exceeds the maximum of {max_gap}")]
    GapTooLarge { after: u64, gap: u64, max_gap: u64 },

    #[error("annotation mapping error: {0}")]
    Mapping(String),

    #[error("unknown report format `{0}`")]
    UnknownFormat(String),

    #[error("unknown predictor `{0}` (expected frame, track, naive or p2p)")]
    UnknownPredictor(String),

    #[error("predictor `p2p` needs a checkpoint")]
    CheckpointMissing,

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
