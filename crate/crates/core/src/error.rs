use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed embedding file, checkpoint archive or encoder bundle.
    #[error("format error in {}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    /// Prediction sets, labels or records that do not cover the same ids.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Not enough registry entries to build the requested ensemble.
    #[error("selection error: {0}")]
    Selection(String),

    #[error("labels unavailable: {0}")]
    MissingLabels(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the `pcl` binary.
    ///
    /// 2 input error, 3 registry/selection error, 4 missing labels, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Format { .. }
            | Error::Config { .. } => 2,
            Error::Selection(_) => 3,
            Error::MissingLabels(_) => 4,
            Error::Alignment(_) | Error::Numeric(_) | Error::Json(_) => 1,
        }
    }
}
