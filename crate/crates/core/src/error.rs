use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unknown semantic class `{0}`; add it to the class table")]
    UnknownClass(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("frame {frame}: {message}")]
    Frame { frame: String, message: String },

    /// Too few correspondences to constrain the warp field.
    #[error("tracking lost: {found} correspondences (need at least {required})")]
    TrackingLost { found: usize, required: usize },

    #[error("solver produced a non-finite energy at outer {outer}, inner {inner}")]
    NonFiniteEnergy { outer: usize, inner: usize },

    #[error("background surface lost at frame {0}")]
    BackgroundLost(usize),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

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

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
