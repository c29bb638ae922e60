use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// [`Error::code`] gives a stable identifier and [`Error::category`] the
/// coarse class the CLI maps onto exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("horizon {ms} ms does not land on a frame at {fps} fps")]
    HorizonMisaligned { ms: u32, fps: f64 },

    #[error("cannot resample {from} fps to {to} fps with an integer stride")]
    ResampleUnsupported { from: f64, to: f64 },

    #[error("sequence has {frames} frames, need at least {needed}")]
    SequenceTooShort { frames: usize, needed: usize },

    #[error("skeleton mismatch: {0}")]
    SkeletonMismatch(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("non-finite coordinate at frame {frame}, joint {joint}")]
    NonFinite { frame: usize, joint: usize },

    #[error("velocity at frame {frame}, joint {joint} is zero; its components are undefined")]
    DegenerateVelocity { frame: usize, joint: usize },

    #[error("probability {value} for {name} is outside [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },

    #[error("noise sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),

    #[error("dimension mismatch: {0}")]
    DimsMismatch(String),

    #[error("invalid model dimensions: {0}")]
    InvalidDims(String),

    #[error("gradient requested before the forward pass was recorded")]
    BackwardBeforeForward,

    #[error("non-finite critic input-gradient norm")]
    NumericalInstability,

    #[error("non-finite gradient at flat index {index} ({name})")]
    AbortStep { index: usize, name: String },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("window needs {needed} future frames, only {available} available")]
    WindowTooShort { needed: usize, available: usize },

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("i/o error: {0}")]
    Io(String),
}

/// Coarse grouping used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::HorizonMisaligned { .. } => "E_HORIZON_MISALIGNED",
            Error::ResampleUnsupported { .. } => "E_RESAMPLE_UNSUPPORTED",
            Error::SequenceTooShort { .. } => "E_SEQUENCE_TOO_SHORT",
            Error::SkeletonMismatch(_) => "E_SKELETON_MISMATCH",
            Error::InvalidSkeleton(_) => "E_INVALID_SKELETON",
            Error::NonFinite { .. } => "E_NON_FINITE",
            Error::DegenerateVelocity { .. } => "E_DEGENERATE_VELOCITY",
            Error::InvalidProbability { .. } => "E_INVALID_PROBABILITY",
            Error::InvalidSigma(_) => "E_INVALID_SIGMA",
            Error::DimsMismatch(_) => "E_DIMS_MISMATCH",
            Error::InvalidDims(_) => "E_INVALID_DIMS",
            Error::BackwardBeforeForward => "E_BACKWARD_BEFORE_FORWARD",
            Error::NumericalInstability => "E_NUMERICAL_INSTABILITY",
            Error::AbortStep { .. } => "E_ABORT_STEP",
            Error::NonFiniteLoss { .. } => "E_NON_FINITE_LOSS",
            Error::WindowTooShort { .. } => "E_WINDOW_TOO_SHORT",
            Error::Parse { .. } => "E_PARSE",
            Error::Format(_) => "E_FORMAT",
            Error::Config(_) => "E_CONFIG",
            Error::EmptyDataset => "E_EMPTY_DATASET",
            Error::Io(_) => "E_IO",
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidProbability { .. }
            | Error::InvalidSigma(_)
            | Error::InvalidDims(_)
            | Error::Config(_) => ErrorCategory::Usage,
            Error::NumericalInstability
            | Error::AbortStep { .. }
            | Error::NonFiniteLoss { .. }
            | Error::BackwardBeforeForward => ErrorCategory::Numeric,
            _ => ErrorCategory::Data,
        }
    }

    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
