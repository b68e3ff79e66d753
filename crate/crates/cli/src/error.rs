use d2nn::D2nnError;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, arguments or incompatible inputs.
    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] D2nnError),
}

impl CliError {
    /// Process exit status: 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Core(D2nnError::Config { .. } | D2nnError::InvalidGrid(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}
