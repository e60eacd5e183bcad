//! Error types shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("grid mismatch: ({0}, {1}) vs ({2}, {3})")]
    GridMismatch(f64, usize, f64, usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("fixed-point iteration did not converge at t = {t}: residual {residual:.3e} after {iters} iterations")]
    NoConvergence { t: f64, residual: f64, iters: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
