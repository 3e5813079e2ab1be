use thiserror::Error;

/// Errors produced by the market, solver and learning layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unbounded coordinate {coordinate}")]
    UnboundedCoordinate { coordinate: usize },

    #[error("unbounded linear program")]
    Unbounded,

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("big-M calibration gave up after {doublings} doublings (beta = {beta:e}); supply beta manually")]
    BetaCap { doublings: usize, beta: f64 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
