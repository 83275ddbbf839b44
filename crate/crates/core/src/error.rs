use thiserror::Error;

/// Errors raised by model evaluation, estimation and inference.
#[derive(Debug, Error)]
pub enum EspError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric domain error at row {row}: {message}")]
    NumericDomain { row: usize, message: String },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("no root found; best residual norm {best_residual:e}")]
    NoRootFound { best_residual: f64 },

    #[error("every start point lies outside the saddlepoint support")]
    EmptySupport,

    #[error("invalid restriction: {0}")]
    InvalidRestriction(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EspError {
    /// True for errors caused by malformed user input rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            EspError::InvalidInput(_) | EspError::InvalidRestriction(_) | EspError::Parse { .. } | EspError::Io(_)
        )
    }
}

pub type Result<T, E = EspError> = std::result::Result<T, E>;
