use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("{what} out of range: {value} not in [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    #[error("matrix is not a rotation: {0}")]
    NotRotation(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("patch around point {index} has {count} neighbors, need at least {needed}")]
    DegeneratePatch {
        index: usize,
        count: usize,
        needed: usize,
    },

    #[error("local reference frame at point {index} is ambiguous (isotropic covariance)")]
    AmbiguousFrame { index: usize },

    #[error("compatibility matrix annihilated the weight vector at iteration {0}")]
    DegenerateSpectrum(usize),

    #[error("weighted normal matrix is rank deficient (condition number {0:e})")]
    RankDeficient(f64),

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("registration failed: {0}")]
    RegistrationFailed(String),

    #[error("training step skipped: {0}")]
    StepSkipped(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error in {path}: {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
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

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
