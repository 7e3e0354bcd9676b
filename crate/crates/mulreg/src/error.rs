//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model construction, estimation, and experiments.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Sample size has no integer d-th root, so no cubic design grid exists.
    #[error("sample size {n} has no integer {d}-th root >= 2")]
    NonCubicSampleSize { n: usize, d: usize },

    /// Requested test function identifier is not shipped.
    #[error("unknown function id `{0}`")]
    UnknownFunctionId(String),

    /// The cube V_h(y) exits the unit cube.
    #[error("window of side {h} at {y:?} exits [0,1]^d")]
    WindowOutOfDomain { y: Vec<f64>, h: f64 },

    /// No design point falls inside the window.
    #[error("window of side {h} at {y:?} contains no design point")]
    EmptyWindow { y: Vec<f64>, h: f64 },

    /// Moment matrix is numerically singular; the least-squares fit is invalid.
    #[error("singular design: smallest moment-matrix eigenvalue {lambda_min:.3e} <= 1e-12")]
    SingularDesign { lambda_min: f64 },

    /// Plug-in level estimate is non-positive, so the random coefficient set
    /// would be empty.
    #[error("non-positive plug-in level estimate A = {0:.6}")]
    NonPositiveAhat(f64),

    /// Coefficient-set bounds do not satisfy 0 < A < M.
    #[error("invalid coefficient-set bounds: A = {a_low}, M = {m_up}")]
    InvalidBounds { a_low: f64, m_up: f64 },

    /// No integration node or proposal carries positive likelihood.
    #[error("posterior support is empty for the given window and coefficient set")]
    EmptyPosteriorSupport,

    /// Constrained descent hit its iteration cap while still moving.
    #[error("constrained minimization did not converge: last step {last_step:.3e}")]
    NonConvergence { last_step: f64 },

    /// Bandwidth ladder has fewer than two scales.
    #[error("degenerate bandwidth ladder for n = {n}: h_min {h_min:.4e} leaves no dyadic scale below h_max {h_max:.4e}")]
    DegenerateGrid { n: usize, h_max: f64, h_min: f64 },

    /// More than 10% of Monte Carlo replications failed.
    #[error("{failed} of {reps} replications failed (> 10%); first failure: {first}")]
    ExcessiveFailures {
        failed: usize,
        reps: usize,
        first: String,
    },

    /// Inputs violate a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Whether the error reflects bad inputs (as opposed to a runtime
    /// estimation failure). CLI maps validation to exit 2, runtime to exit 3.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NonCubicSampleSize { .. }
                | Error::UnknownFunctionId(_)
                | Error::WindowOutOfDomain { .. }
                | Error::DegenerateGrid { .. }
                | Error::InvalidBounds { .. }
                | Error::InvalidArgument(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
