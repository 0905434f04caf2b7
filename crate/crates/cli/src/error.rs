use std::process::ExitCode;

/// CLI failure classes, each with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure::Config(message.into())
    }

    pub fn io(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        Failure::Io(format!("{context}: {err}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 1,
        })
    }
}

impl From<codex_core::Error> for Failure {
    fn from(err: codex_core::Error) -> Self {
        match err {
            codex_core::Error::Numerical(_) => Failure::Numerical(err.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}
