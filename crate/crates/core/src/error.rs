use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum BlvError {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid probability {value} for {what}: must lie in {range}")]
    InvalidProbability {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("rejection sampling of {distribution} gave up after {attempts} attempts; bounds too tight")]
    AttemptCapExceeded {
        distribution: String,
        attempts: usize,
    },

    #[error("guard exceeded: {0}")]
    Guard(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BlvError {
    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            BlvError::AttemptCapExceeded { .. } | BlvError::Guard(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = BlvError> = std::result::Result<T, E>;
