use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] meanflow_core::Error),
}

impl CliError {
    /// 1 for anything the operator can fix by changing inputs, 2 for failures
    /// while doing the work.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Usage(_) => 1,
            Self::Core(meanflow_core::Error::InvalidArgument(_)) => 1,
            Self::Core(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
