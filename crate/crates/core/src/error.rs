use std::path::PathBuf;

use crate::transform::ModelKind;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the registration library can report.
///
/// The three pipeline stage failures (`TooFewKeypoints`,
/// `InsufficientMatches`, `DegenerateConfiguration`) map onto distinct CLI
/// exit codes; see [`Error::exit_code`].
#[derive(Clone, Debug, thiserror::Error)]
pub enum Error {
    #[error("unsupported raster format: {0}")]
    UnsupportedFormat(String),
    #[error("band index {index} out of range ({count} bands)")]
    BandOutOfRange { index: usize, count: usize },
    #[error("i/o failure on {path}: {message}")]
    IoFailure { path: PathBuf, message: String },
    #[error("image data length {len} does not match {width}x{height}")]
    BadDimensions { width: usize, height: usize, len: usize },
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("image {width}x{height} too small (need at least {min}x{min})")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("image needs at least {required} px per side for the configured octaves, got {actual}")]
    ImageTooSmallForOctaves { required: usize, actual: usize },
    #[error("octave {octave} out of range ({count} octaves)")]
    OctaveOutOfRange { octave: usize, count: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("too few keypoints: found {found}, need {min_points}")]
    TooFewKeypoints { found: usize, min_points: usize },
    #[error("main orientation is invalid (structureless neighborhood)")]
    InvalidOrientation,
    #[error("window does not fit inside the level image")]
    WindowOutOfBounds,
    #[error("descriptor bundle is empty")]
    EmptyBundle,
    #[error("insufficient matches: {0} survived, need at least 3")]
    InsufficientMatches(usize),
    #[error("{kind} model needs {needed} points, got {got}")]
    InsufficientPoints { kind: ModelKind, needed: usize, got: usize },
    #[error("degenerate point configuration for {0} model")]
    DegenerateConfiguration(ModelKind),
    #[error("point maps to infinity")]
    PointAtInfinity,
    #[error("transform is singular")]
    SingularTransform,
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::IoFailure { path: path.into(), message: err.to_string() }
    }

    /// Process exit code used by the `msreg` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::TooFewKeypoints { .. } => 2,
            Error::InsufficientMatches(_) | Error::InsufficientPoints { .. } => 3,
            Error::DegenerateConfiguration(_) | Error::SingularTransform => 4,
            _ => 1,
        }
    }
}
