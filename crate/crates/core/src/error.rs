use thiserror::Error;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid input: {0}")]
    Input(&'static str),
    #[error("non-finite value encountered in {0}")]
    Numerical(&'static str),
    #[error("contraction condition violated: gamma * L_P * (1 + L_pi) = {0} must be < 1")]
    Contraction(f64),
    #[error("discount factor must satisfy 0 <= gamma < 1, got {0}")]
    Discount(f64),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
