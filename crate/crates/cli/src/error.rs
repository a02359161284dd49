use thiserror::Error;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] transcal_core::Error),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    /// Degeneracies exit with 3; everything else is a validation failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_degeneracy() => EXIT_DEGENERATE,
            _ => EXIT_VALIDATION,
        }
    }
}
