use thiserror::Error;

/// Errors surfaced by the engine. The CLI maps these onto exit codes:
/// usage problems exit 1, data problems 2, numerical failures 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArg(_) => 1,
            Error::Shape(_) | Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
