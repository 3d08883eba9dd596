use thiserror::Error;

/// Errors raised by the simulation and optimization routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input document.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    /// Inconsistent or incomplete problem description.
    #[error("configuration error: {0}")]
    Config(String),

    /// An input violates a mathematical precondition (e.g. nonpositive diffusion).
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was called with data produced in the wrong mode.
    #[error("usage error: {0}")]
    Usage(String),

    #[error(
        "linear solver did not converge ({context}): relative residual {residual:.3e} after {iterations} iterations"
    )]
    Solver {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("optimization failed at iteration {iteration}: {message} (cost {cost:.6e}, residual {residual:.3e})")]
    Optimization {
        message: String,
        iteration: usize,
        cost: f64,
        residual: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
