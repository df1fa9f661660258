use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] nsd_core::Error),
}

impl HarnessError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Self::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// Process exit status: 2 for configuration problems, 3 when chains ran
    /// out of retries, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Core(nsd_core::Error::RetryExhausted { .. }) => 3,
            Self::Core(nsd_core::Error::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}
