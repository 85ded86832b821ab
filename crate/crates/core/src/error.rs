use alloc::string::String;
use nalgebra::DMatrix;

/// Errors produced by the estimation, control, and simulation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite {
        what: &'static str,
        min_eigenvalue: f64,
    },

    #[error("{what} not positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("degenerate trace denominator {trace:e} (threshold {threshold:e})")]
    DegenerateDenominator { trace: f64, threshold: f64 },

    #[error("gain fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    GainNoConvergence {
        gamma: DMatrix<f64>,
        q: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("SDP did not converge after {iterations} iterations (gap {gap:e})")]
    SolverNoConvergence {
        iterations: usize,
        gap: f64,
        best_rho: f64,
        best: alloc::boxed::Box<crate::sdp::SdpSolution>,
    },

    #[error("SDP infeasible: {0}")]
    Infeasible(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
