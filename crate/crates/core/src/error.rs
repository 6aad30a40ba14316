use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid unit conversion: {0}")]
    Unit(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unsupported file variant: {0}")]
    Unsupported(String),
    #[error("grid type mismatch: expected {expected}, found {found}")]
    TypeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("no foreground: {0}")]
    NoForeground(String),
    #[error("no periodic ridge signal: {0}")]
    NoRidgeSignal(String),
    #[error("implausible scale factor {0}")]
    ImplausibleScale(f32),
    #[error("insufficient contour: {rows} usable rows, need {needed}")]
    InsufficientContour { rows: usize, needed: usize },
    #[error("reconstruction failed: {0}")]
    Reconstruction(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unwarp failed: {0}")]
    Unwarp(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the content or encoding of an input file,
    /// false for failures of the numerical stages.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Unit(_)
                | Error::InvalidGrid(_)
                | Error::DimensionMismatch(_)
                | Error::Format(_)
                | Error::Unsupported(_)
                | Error::TypeMismatch { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
