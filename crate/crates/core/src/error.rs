use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("network error after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },

    #[error("missing prerequisite {}: {reason}", path.display())]
    Precondition { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn precondition(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Precondition {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl Error {
    /// Process exit status for a failed command: 1 usage, 2 precondition,
    /// 3 data integrity, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Config(_) => 1,
            Error::Precondition { .. } | Error::Network { .. } | Error::Io(_) => 2,
            Error::Format(_) | Error::Version { .. } | Error::Integrity(_) => 3,
            Error::Numeric(_) | Error::Shape(_) | Error::State(_) => 4,
        }
    }
}
