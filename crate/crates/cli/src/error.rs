use std::process::ExitCode;

use bellbench_core::Error as CoreError;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Core(e) => match e {
                CoreError::Io { .. } => EXIT_IO,
                CoreError::NonConvergence { .. } | CoreError::Busy => EXIT_RUNTIME,
                _ => EXIT_VALIDATION,
            },
        }
    }

    pub fn exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }
}

pub type CliResult<T> = Result<T, CliError>;
