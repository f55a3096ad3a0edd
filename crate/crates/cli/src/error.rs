use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] shallowmode::Error),

    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical or output failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Model(shallowmode::Error::InvalidParameter(_) | shallowmode::Error::Json(_)) => 2,
            CliError::Model(_) | CliError::Output { .. } => 3,
        }
    }
}
