use std::path::PathBuf;

use orthodc_core::Error as CoreError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown config key `{key}` on line {line}")]
    UnknownKey { key: String, line: usize },

    #[error("config key `{key}`: {msg}")]
    BadValue { key: String, msg: String },

    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("{0}")]
    Usage(String),

    #[error("verification failed: {}", .0.join(", "))]
    Verification(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::UnknownKey { .. }
            | CliError::BadValue { .. }
            | CliError::Syntax { .. }
            | CliError::Usage(_)
            | CliError::Io { .. } => EXIT_USAGE,
            CliError::Core(e) => match e {
                CoreError::Parameter(_) | CoreError::Parse(_) | CoreError::Io(_) => EXIT_USAGE,
                _ => EXIT_DIVERGED,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
