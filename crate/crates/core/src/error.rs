use thiserror::Error;

/// Errors produced by the numerical routines and model constructors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: value {value:e}, error estimate {error_estimate:e}")]
    NonConvergence { value: f64, error_estimate: f64 },

    #[error("non-finite function value {value} at x = {x}")]
    NonFiniteEvaluation { x: f64, value: f64 },

    #[error("density vanishes at x = {0}; Lin's function is undefined there")]
    ZeroDensity(f64),

    #[error("joint density is negative ({value:e}) at ({x}, {y})")]
    NegativeDensity { x: f64, y: f64, value: f64 },

    #[error("hyperbola xy = {z} does not cross the required circle")]
    NoIntersection { z: f64 },

    #[error("slope search exhausted its frequency budget at nu = {nu:e}")]
    SearchBudgetExceeded { nu: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
