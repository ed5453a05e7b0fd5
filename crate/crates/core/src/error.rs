use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid direction: zero-length vector")]
    InvalidDirection,

    #[error("point ({x:.3}, {y:.3}, {z:.3}) mm lies outside the volume")]
    OutOfBounds { x: f64, y: f64, z: f64 },

    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("empty fiber bundle: {0}")]
    EmptyBundle(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate tangent between centerline samples {index} and {}", index + 1)]
    DegenerateTangent { index: usize },

    #[error("invalid evaluation grid: {0}")]
    InvalidGrid(String),

    #[error("degenerate triangle between contour planes {plane} and {}", plane + 1)]
    DegenerateFace { plane: usize },

    #[error("internal consistency violation: {0}")]
    InternalConsistency(String),

    #[error("incompatible masks: {0}")]
    IncompatibleMasks(String),

    #[error("no records to aggregate")]
    EmptyReport,

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
