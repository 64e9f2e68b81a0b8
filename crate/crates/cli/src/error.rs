use remos_core::CoreError;
use thiserror::Error;

/// Exit codes:
///
/// | code | class        |
/// |------|--------------|
/// | 0    | success      |
/// | 1    | io           |
/// | 2    | usage/config |
/// | 3    | input        |
/// | 4    | checkpoint   |
/// | 5    | diverged     |
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Io(_) | CliError::Core(CoreError::Io(_)) => "io",
            CliError::Core(CoreError::Checkpoint(_)) => "checkpoint",
            CliError::Core(CoreError::Diverged { .. }) => "diverged",
            CliError::Core(_) => "input",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "io" => 1,
            "config" => 2,
            "input" => 3,
            "checkpoint" => 4,
            "diverged" => 5,
            _ => 1,
        }
    }
}

pub fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}
