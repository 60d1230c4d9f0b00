use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: not found", .0.display())]
    NotFound(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed tiff: {0}")]
    Tiff(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("rotated raster unsupported")]
    RotatedRaster,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no valid data: {0}")]
    NoData(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("malformed points file: {0}")]
    Points(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{field} mismatch: checkpoint has {expected}, run has {actual}")]
    CheckpointMismatch {
        field: String,
        expected: String,
        actual: String,
    },

    #[error("inference interrupted after {completed} of {total} batches; rerun with resume to continue")]
    Interrupted { completed: usize, total: usize },

    #[error("no adapter available for {0}")]
    NoAdapter(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that leave a checkpoint behind and can be resumed.
    pub fn is_resumable(&self) -> bool {
        matches!(self, Error::Interrupted { .. } | Error::Io(_))
    }
}
