use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// State outside the region where the attitude kinematics are defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// Decoupling matrix is singular (zero thrust or attitude at the bound).
    #[error("singular decoupling matrix: {0}")]
    Singular(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    /// An iterative solver did not reach its tolerance.
    #[error("no convergence after {iterations} iterations: {what}")]
    NonConvergence { what: String, iterations: usize },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
