use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle is within 1e-6 of pi; the logarithm branch is ambiguous")]
    NearPiRotation,

    #[error("point has non-positive depth {depth} in the camera frame")]
    NonPositiveDepth { depth: f64 },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("quaternion norm {norm} is outside [0.999, 1.001] (line {line})")]
    NonUnitQuaternion { line: usize, norm: f64 },

    #[error("duplicate observation of point {point_id} in frame {frame_id}")]
    DuplicateObservation { frame_id: u64, point_id: u64 },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("frame {frame_id} has no descriptor")]
    MissingDescriptor { frame_id: u64 },

    #[error("frame {frame_id} has no pose")]
    MissingPose { frame_id: u64 },

    #[error("seed frame {frame_id} is not in the training set")]
    UnknownSeed { frame_id: u64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("insufficient observations: have {have}, need {need}")]
    InsufficientObservations { have: usize, need: usize },

    #[error("solver did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("information matrix is singular (condition number {condition:e})")]
    SingularInformation { condition: f64 },

    #[error("covariance has a negative variance {value} on the diagonal")]
    NegativeVariance { value: f64 },

    #[error("motion window holds {have} estimates, need at least {need}")]
    InsufficientHistory { have: usize, need: usize },

    #[error("covariance matrix is not invertible")]
    SingularCovariance,

    #[error("neither a geometric estimate nor a motion prediction is available")]
    NoInput,

    #[error("scene generation failed after {attempts} attempts")]
    GenerationFailure { attempts: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("localization failed for frame {frame_id}: {reason}")]
    LocalizationFailure { frame_id: u64, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
