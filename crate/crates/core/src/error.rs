use thiserror::Error;

/// Failure modes shared by every solver and oracle in the crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EndowError {
    #[error("invalid scenario tree: {0}")]
    InvalidTree(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The martingale polytope has empty interior, i.e. the market admits arbitrage.
    #[error("no equivalent martingale measure exists (max-min margin {margin:e})")]
    NoEmm { margin: f64 },

    #[error("portfolio is not in the interior of the acceptable cone: x = {x}, minimal capital {min_capital}")]
    NotInK { x: f64, min_capital: f64 },

    #[error("dual point is not in the relative interior of the dual cone: {0}")]
    NotInL(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("certificate failure: {0}")]
    CertificateFailure(String),

    #[error("bisection bracket failure on [{lo}, {hi}]")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("linear program failed: {0}")]
    Lp(String),
}

pub type Result<T> = std::result::Result<T, EndowError>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(EndowError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
