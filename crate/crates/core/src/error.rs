use std::path::PathBuf;

/// Errors produced by the fusion engine.
///
/// File-format problems each get their own variant so the CLI can surface a
/// precise diagnostic.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty mask")]
    EmptyMask,
    #[error("mask indices are not strictly increasing at position {position}")]
    NonMonotone { position: usize },
    #[error("index out of range: {index} >= {limit}")]
    IndexOutOfRange { index: u64, limit: u64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("duplicate proposal id {0:?}")]
    DuplicateId(String),
    #[error("no cloud point qualifies for 2D mask {mask_id:?} in frame {frame_id}")]
    EmptyLift { frame_id: u32, mask_id: String },
    #[error("no frame sees any point of the mask")]
    NoVisibleFrame,
    #[error("mask does not project into frame {frame_id}")]
    NoProjection { frame_id: u32 },
    #[error("averaged feature has zero norm")]
    ZeroVector,
    #[error("feature provider failed on crop (proposal {proposal_id:?}, frame {frame_id}, level {level}): {message}")]
    Provider {
        proposal_id: String,
        frame_id: u32,
        level: u32,
        message: String,
    },
    #[error("feature provider failed: {0}")]
    ProviderBatch(String),
    #[error("infeasible synthetic scene: {0}")]
    InfeasibleScene(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: png: {message}")]
    Png { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
