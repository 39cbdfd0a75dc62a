use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs are individually valid but inconsistent with each other
    /// (dimension or layout mismatch).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported (model, loss) combination: ({model}, {loss})")]
    UnsupportedCombination { model: String, loss: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A non-finite value appeared during optimization. Carries the parameter
    /// vector that produced it.
    #[error("numerical failure: {message}")]
    NumericalFailure { message: String, theta: Vec<f64> },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
