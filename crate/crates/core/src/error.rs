use thiserror::Error;

/// Errors raised by the calibration toolkit.
///
/// Variants split into two families: input validation (bad shapes, labels
/// out of range, invalid parameters) and numeric degeneracy (non-finite
/// losses, all-zero weights). Callers such as the CLI map the families to
/// distinct exit codes via [`Error::is_degeneracy`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {what} (expected {expected}, got {got})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("label {label} at index {index} out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// True for failures caused by the numbers themselves rather than by
    /// malformed input.
    pub fn is_degeneracy(&self) -> bool {
        matches!(
            self,
            Error::DegenerateWeights(_) | Error::Numeric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
