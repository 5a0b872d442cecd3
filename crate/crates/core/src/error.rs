use thiserror::Error;

/// Errors raised across the toolkit.
///
/// The variants are grouped so that a driver can map them onto process
/// exit codes: configuration problems, mathematical obstructions (the
/// system really is not controllable, no witness exists, ...), and
/// numerical breakdowns.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid diffusion coefficient: {0}")]
    Diffusion(String),

    #[error("diffusion matrix is not admissible: {0}")]
    Diagonalization(String),

    #[error("system not controllable at this truncation - deficient modes: {modes:?}")]
    NotControllable { modes: Vec<usize> },

    #[error("no witness exists: {0}")]
    NoWitness(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for errors caused by the problem description itself.
    pub fn is_invalid_spec(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Domain(_)
                | Error::Shape(_)
                | Error::Diffusion(_)
                | Error::Diagonalization(_)
        )
    }

    /// True for errors that reflect a mathematical obstruction rather than
    /// a bad input or a solver breakdown.
    pub fn is_mathematical(&self) -> bool {
        matches!(self, Error::NotControllable { .. } | Error::NoWitness(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
