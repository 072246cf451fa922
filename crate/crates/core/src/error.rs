use thiserror::Error;

/// Errors surfaced by the library. Each variant maps onto one CLI exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed case: {0}")]
    MalformedCase(String),
    #[error("infeasible case: {0}")]
    InfeasibleCase(String),
    #[error("no dispatch satisfies the network limits: {0}")]
    Infeasible(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("ill-conditioned covariance after {attempts} jitter attempts")]
    IllConditioned { attempts: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(format!("json: {e}"))
    }
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InfeasibleCase(_) | Error::Infeasible(_) => 2,
            Error::Integrity(_) => 3,
            _ => 1,
        }
    }
}
