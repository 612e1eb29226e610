use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit code classes:
/// configuration problems, geometry/data problems, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("corkscrew locator failed on side {side}: no candidate point survived")]
    LocatorFailure { side: u8 },

    #[error("statistical failure: {0}")]
    Statistical(String),

    #[error("decomposition failure: {0}")]
    Decomposition(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
