use dtc_core::Error;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, keys or values (exit 2).
    #[error("{0}")]
    Usage(String),
    /// A check ran and did not hold (exit 1).
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Check(_) => 1,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::ChannelConstraint(_) | Error::Contract { .. } | Error::InvalidShape { .. } => 2,
                _ => 1,
            },
        }
    }

    pub fn message(&self) -> String {
        self.to_string()
    }
}

pub type CliResult<T> = Result<T, CliError>;
