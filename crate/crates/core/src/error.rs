use thiserror::Error;

/// Failure modes shared by every numerical module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(
        "quadrature did not reach tolerance: achieved {achieved:.3e}, requested {requested:.3e}"
    )]
    Tolerance { achieved: f64, requested: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("missing capability: {0}")]
    Capability(String),
    #[error("out of validated range: {0}")]
    Range(String),
    #[error("finiteness check failed: {0}")]
    Finiteness(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
