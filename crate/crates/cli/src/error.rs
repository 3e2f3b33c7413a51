use std::fmt;
use std::path::Path;

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, malformed or inconsistent inputs. Exit code 1.
    #[error("{0}")]
    Validation(String),
    /// The numerics failed on valid inputs. Exit code 2.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn validation(msg: impl fmt::Display) -> Self {
        CliError::Validation(msg.to_string())
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Validation(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<stfusion::Error> for CliError {
    fn from(e: stfusion::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
