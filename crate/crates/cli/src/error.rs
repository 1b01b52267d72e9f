use std::path::Path;

use serde::Serialize;
use thiserror::Error;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Config(m) | CliError::Numerical(m) => m,
        }
    }

    /// Machine-readable form: `{"error": kind, "message": ..., "exit_code": n}`.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            error: &'a str,
            message: &'a str,
            exit_code: i32,
        }
        serde_json::to_string(&Body { error: self.kind(), message: self.message(), exit_code: self.exit_code() })
            .expect("error body serializes")
    }

    /// Prefixes the message with a location such as `file.csv line 4`.
    pub fn context(self, at: impl std::fmt::Display) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{at}: {m}")),
            CliError::Config(m) => CliError::Config(format!("{at}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{at}: {m}")),
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }
}

impl From<gprloc_core::Error> for CliError {
    fn from(e: gprloc_core::Error) -> Self {
        use gprloc_core::Error as E;
        match e {
            E::Input(m) | E::Format(m) => CliError::Input(m),
            E::Config(m) => CliError::Config(m),
            E::Numerical(m) => CliError::Numerical(m),
            E::Io(e) => CliError::Input(e.to_string()),
        }
    }
}

/// Extension for attaching location context to core results.
pub(crate) trait Context<T> {
    fn at(self, where_: impl std::fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn at(self, where_: impl std::fmt::Display) -> CliResult<T> {
        self.map_err(|e| e.into().context(where_))
    }
}
