use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported or malformed data: {0}")]
    Format(String),
    #[error("image must be at least 2x2, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("step count must be odd and >= 3, got {0}")]
    EvenStepCount(usize),
    #[error("zero-constraint trajectory stores {stored} steps, {requested} requested")]
    StepMismatch { stored: usize, requested: usize },
    #[error("operation not supported for constraint mode {0:?}")]
    UnsupportedMode(crate::trajectory::ConstraintMode),
    #[error("kernel support radius {radius} too small, need at least {required}")]
    SupportTooSmall { radius: usize, required: usize },
    #[error("image {width}x{height} too small for {scales} ssim scales")]
    TooSmallForScales {
        width: usize,
        height: usize,
        scales: usize,
    },
    #[error("loss became non-finite at level {level}, iteration {iteration}")]
    NonFiniteLoss { level: usize, iteration: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
