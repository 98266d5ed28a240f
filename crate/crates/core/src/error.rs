use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Evaluation outside the domain of a weight function (e.g. at a singular endpoint).
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    /// Fields that are not conformable with the tree or the grid.
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
