use std::fmt;
use std::process::ExitCode;

use fbsdiff_core::Error;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Bridge(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(1),
            CliError::Io(_) => ExitCode::from(2),
            CliError::Bridge(_) => ExitCode::from(3),
        }
    }

    pub fn io(context: impl fmt::Display, err: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Bridge(m) => write!(f, "bridge error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io { .. }
            | Error::NonFinite { .. }
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::ShapeMismatch { .. }
            | Error::InvalidHeader(_)
            | Error::InvalidShape(_) => CliError::Io(msg),
            Error::Transport(_) | Error::Protocol(_) | Error::Remote(_) => CliError::Bridge(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
