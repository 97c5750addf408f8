use thiserror::Error;

/// Failures with a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 2.
    #[error("{0}")]
    Config(String),
    /// The run could not proceed on the data it saw; exit code 3.
    #[error("{0}")]
    Runtime(String),
    /// Filesystem or serialization failure; exit code 1.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<polis_core::Error> for CliError {
    fn from(e: polis_core::Error) -> Self {
        use polis_core::Error as E;
        match e {
            E::Degenerate { .. } | E::History(_) | E::Range { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
