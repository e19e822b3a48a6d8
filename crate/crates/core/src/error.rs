use thiserror::Error;

/// Errors raised by problem construction, oracles and solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SviError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("oracle capability: {0}")]
    Capability(String),
    #[error("parameter regime violated: {0}")]
    Regime(String),
    #[error("contract violated: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, SviError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SviError::DimensionMismatch { expected, got })
    }
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(SviError::InvalidArgument(format!("{name} must be a positive finite number, got {value}")))
    }
}

pub(crate) fn check_nonnegative(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(SviError::InvalidArgument(format!("{name} must be a nonnegative finite number, got {value}")))
    }
}
