use dpolab_core::LabError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration; `key` names the offending entry.
    #[error("invalid value for `{key}`: {message}")]
    Usage { key: String, message: String },

    #[error(transparent)]
    Lab(#[from] LabError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config file error: {0}")]
    Ini(#[from] ini::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn usage(key: &str, message: impl Into<String>) -> CliError {
    CliError::Usage { key: key.to_string(), message: message.into() }
}
