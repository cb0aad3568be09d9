use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Arguments outside the mathematical domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix or vector shapes that do not fit together.
    #[error("shape error: {0}")]
    Shape(String),

    /// A data block whose row space is not of full rank.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    /// Invalid tuning or study parameters.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A numerical routine produced a value it should not have.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed study configuration.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
