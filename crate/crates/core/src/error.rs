use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("batch drawn from {actual} split where {expected} split is required")]
    WrongOrigin {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (residual norm {residual:.3e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("Neumann series diverged at term {term}: term norm {norm:.3e} exceeds 10x the first term")]
    NeumannDiverged { term: usize, norm: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
