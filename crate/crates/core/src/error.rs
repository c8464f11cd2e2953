//! Crate-wide error type with a coarse classification used for CLI exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // Coordinates and observation geometry.
    #[error("altitude {alt} km outside grid range [{min}, {max}] km")]
    AltitudeOutOfRange { alt: f64, min: f64, max: f64 },
    #[error("non-finite coordinate ({0})")]
    NonFiniteCoordinate(&'static str),
    #[error("non-positive density: {0}")]
    NonPositiveDensity(f64),

    // Shapes and inputs.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),

    // Basis fitting.
    #[error("requested rank {r} exceeds min(d, m) = {max}")]
    RankTooLarge { r: usize, max: usize },
    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    // Regression and cadence rescaling.
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("no real principal fractional power: {0}")]
    NoRealPrincipalRoot(String),
    #[error("filter step {t2} s does not divide model cadence {cadence} s")]
    CadenceMismatch { cadence: f64, t2: f64 },

    // Filtering.
    #[error("non-finite filter state at step {0}")]
    NonFiniteState(usize),
    #[error("innovation variance not positive: {0}")]
    NonPositiveInnovationVariance(f64),

    // Drivers and time series.
    #[error("epoch {epoch} s outside covered range [{first}, {last}] s")]
    OutOfRangeEpoch { epoch: i64, first: i64, last: i64 },
    #[error("duplicate or non-increasing epoch at {0} s")]
    DuplicateEpoch(i64),

    // Synthetic truth.
    #[error("synthetic truth diverged at step {0}")]
    UnstableTruth(usize),

    // Containers and files.
    #[error("bad container magic (expected RDX1)")]
    BadMagic,
    #[error("truncated container: {0}")]
    TruncatedFile(String),
    #[error("overlapping or out-of-bounds data blocks: {0}")]
    OverlappingBlocks(String),
    #[error("bad container header: {0}")]
    BadHeader(String),
    #[error("container has no array named {0:?}")]
    MissingArray(String),
    #[error("container has no attribute named {0:?}")]
    MissingAttr(String),
    #[error("non-positive training density at flat index {0}")]
    NonPositiveTrainingDensity(usize),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    // Measurement preprocessing and evaluation.
    #[error("no measurements left after preprocessing")]
    EmptyAfterPreprocessing,
    #[error("empty input series")]
    EmptyInput,
    #[error("non-positive measurement at index {0}")]
    NonPositiveMeasurement(usize),

    // Configuration and orchestration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code: 2 configuration, 3 data, 4 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) | CadenceMismatch { .. } | RankTooLarge { .. } => 2,
            SingularSystem(_)
            | NoRealPrincipalRoot(_)
            | NonFiniteState(_)
            | NonPositiveInnovationVariance(_)
            | UnstableTruth(_) => 4,
            _ => 3,
        }
    }
}
