use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside its declared domain (point outside a box,
    /// mismatched dimensions, empty sample pools, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration is structurally invalid (bad discount factor,
    /// regularization radius below the feasibility threshold, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical routine failed to meet its own tolerance contract.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The LP solver reported a non-optimal status where an optimum was
    /// required, or broke down internally.
    #[error("solver error: {0}")]
    Solver(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn solver(msg: impl Into<String>) -> Self {
        Error::Solver(msg.into())
    }
}
