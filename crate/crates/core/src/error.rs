//! Error types shared by every solver stage.

use thiserror::Error;

use crate::inner::InnerReport;
use crate::outer::OuterTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which initialization check rejected a starting policy.
#[derive(Debug, Error)]
pub enum InitError {
    #[error("system pair ({pair}) is not stabilizable")]
    NotStabilizable { pair: &'static str },
    #[error("best-response Riccati equation has no usable stabilizing solution: {reason}")]
    DareNotSolvable { reason: String },
    #[error("curvature {what} is not positive definite (min eigenvalue {min_eig:e})")]
    CurvatureNotPositive { what: &'static str, min_eig: f64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} contains non-finite entries")]
    NotFinite { what: String },

    #[error("{what} is not symmetric (asymmetry {asym:e})")]
    NotSymmetric { what: String, asym: f64 },

    #[error("{what} is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { what: String, min_eig: f64 },

    /// The closed-loop matrix has spectral radius >= 1, so the Lyapunov
    /// value is undefined (or finite but meaningless).
    #[error("matrix is not Schur stable (spectral radius {rho})")]
    NotSchur { rho: f64 },

    #[error("{what} is singular or ill-conditioned (reciprocal condition estimate {rcond:e})")]
    Singular { what: String, rcond: f64 },

    #[error("pair ({pair}) is not stabilizable")]
    NotStabilizable { pair: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("gradient vanishes; the current policy is already stationary")]
    DegenerateGradient,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("initialization rejected: {0}")]
    Init(#[from] InitError),

    #[error("inner solver did not converge in {} iterations (last gradient norm {:e})", .report.iterations, .report.final_grad_norm)]
    InnerNonConvergence { report: Box<InnerReport> },

    #[error("inner iterate left the stabilizing set at iteration {iteration} (spectral radius {rho})")]
    InnerLeftStableSet {
        iteration: usize,
        rho: f64,
        report: Box<InnerReport>,
    },

    #[error("outer solver did not converge in {} rounds", .trace.records.len())]
    OuterNonConvergence { trace: Box<OuterTrace> },

    #[error("follower oracle failed in round {round}: {source}")]
    Oracle {
        round: usize,
        #[source]
        source: Box<Error>,
        trace: Box<OuterTrace>,
    },

    #[error("invariant violated in round {round}: {detail}")]
    InvariantViolation {
        round: usize,
        detail: String,
        trace: Box<OuterTrace>,
    },
}

impl Error {
    /// True for failures the convergence theory rules out; surfacing them
    /// points at an implementation bug or a violated standing assumption.
    pub fn is_invariant_violation(&self) -> bool {
        match self {
            Error::InvariantViolation { .. } | Error::InnerLeftStableSet { .. } => true,
            Error::Oracle { source, .. } => source.is_invariant_violation(),
            _ => false,
        }
    }

    pub fn is_non_convergence(&self) -> bool {
        match self {
            Error::InnerNonConvergence { .. } | Error::OuterNonConvergence { .. } => true,
            Error::Oracle { source, .. } => !source.is_invariant_violation(),
            _ => false,
        }
    }

    /// The outer trace carried by this error, if any.
    pub fn trace(&self) -> Option<&OuterTrace> {
        match self {
            Error::OuterNonConvergence { trace }
            | Error::Oracle { trace, .. }
            | Error::InvariantViolation { trace, .. } => Some(trace),
            _ => None,
        }
    }
}
