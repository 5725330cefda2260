use std::path::Path;

use thiserror::Error;

/// Failure of a subcommand. Validation errors concern the inputs and exit
/// with status 1; runtime errors exit with status 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn read(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{}: {err}", path.display()))
    }

    pub fn write(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Runtime(format!("{}: {err}", path.display()))
    }
}

impl From<spatial_abundance::Error> for CliError {
    fn from(e: spatial_abundance::Error) -> Self {
        use spatial_abundance::Error as E;
        match e {
            E::Simulation(_) | E::EmptyDraws(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
