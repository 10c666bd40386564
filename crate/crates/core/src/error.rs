use std::path::PathBuf;

use thiserror::Error;

use crate::camera::ViewId;
use crate::synth::SynthError;

/// Errors produced by the editing engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("view {id}: {reason}")]
    InvalidView { id: ViewId, reason: String },

    #[error("dataset requires ≥ 2 views (got {0})")]
    TooFewViews(usize),

    #[error("missing manifest: {}", .0.display())]
    MissingManifest(PathBuf),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("unsupported image format: {}", .0.display())]
    UnsupportedFormat(PathBuf),

    #[error("camera {0} lies inside scene geometry")]
    CameraInsideGeometry(usize),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },

    #[error("unknown view id {0}")]
    UnknownView(ViewId),

    #[error("schedule: {0}")]
    Schedule(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error(transparent)]
    Synthesis(#[from] SynthError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn view(id: ViewId, reason: impl Into<String>) -> Self {
        Error::InvalidView {
            id,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
