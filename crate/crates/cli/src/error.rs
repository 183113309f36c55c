use svc_core::config::ConfigError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or unreadable configuration; nothing was computed.
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Operational(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Operational(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
