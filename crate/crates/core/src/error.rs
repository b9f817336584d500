use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("alphabet of {needed} symbols exceeds budget of {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("side symbol {0} has no mass under the source")]
    UnknownSymbol(u64),

    #[error("block length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("X marginal is not uniform (max deviation {0:.3e})")]
    NonUniformMarginal(f64),

    #[error("quadrature did not converge (error estimate {0:.3e} bits)")]
    Quadrature(f64),

    #[error("malformed block: {0}")]
    Wire(String),
}

pub type Result<T> = std::result::Result<T, Error>;
