//! Self-contained optimization engines: a dense two-phase simplex for linear
//! programs, a primal-dual interior-point method for convex quadratic
//! programs, and a log-barrier Newton method for the log-volume objectives
//! used by the triggering-box construction.
//!
//! All routines are deterministic: fixed pivoting rules, fixed step rules, no
//! randomized restarts. Identical inputs give bit-identical reports.

mod logvol;
mod lp;
mod qp;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

pub use logvol::{maximize_log_volume, maximize_log_volume_fixed, LogVolumeMode};
pub use lp::{solve_lp, LpProblem};
pub use qp::{solve_qp, QpProblem};

/// Absolute primal/dual feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-8;
/// Duality-gap tolerance for the interior-point methods.
pub const GAP_TOL: f64 = 1e-8;
/// Newton-decrement tolerance for the log-volume barrier method.
pub const NEWTON_TOL: f64 = 1e-8;
/// Iteration cap for the interior-point and barrier methods.
pub const MAX_ITER: usize = 200;
/// Coordinates whose feasible extent is below this are degenerate.
pub const DEGENERATE_WIDTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    /// Largest of primal infeasibility, dual infeasibility and complementarity
    /// violation at the returned point.
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Farkas multipliers (infeasible) or a recession ray (unbounded).
    pub certificate: Option<DVector<f64>>,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub(crate) fn failed(status: SolveStatus, n: usize, iterations: usize) -> Self {
        SolveReport {
            status,
            x: DVector::zeros(n),
            objective: f64::NAN,
            kkt_residual: f64::INFINITY,
            iterations,
            certificate: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite problem data: {0}")]
    NonFinite(&'static str),
    #[error("Hessian is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("degenerate coordinates with feasible extent below 1e-9: {0:?}")]
    DegenerateCoordinate(Vec<usize>),
    #[error("feasible set has no interior in the objective coordinates")]
    NoInterior,
    #[error("log-volume problem is infeasible")]
    Infeasible,
    #[error("log-volume objective is unbounded along variable {0}")]
    Unbounded(usize),
    #[error("linear algebra failure: {0}")]
    Numerical(&'static str),
}
