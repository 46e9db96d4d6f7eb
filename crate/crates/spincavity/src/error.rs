use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    Param(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("size guard exceeded: {0}")]
    Guard(String),
    #[error("accuracy check failed: {0}")]
    Accuracy(String),
    #[error("unsupported parity case: {0}")]
    Case(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("budget must be at least {min}, got {got}")]
    Budget { min: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Param(_) | Error::Config(_) | Error::Json(_) | Error::Io(_) | Error::Empty(_) => 2,
            Error::Budget { .. } => 4,
            _ => 3,
        }
    }
}
