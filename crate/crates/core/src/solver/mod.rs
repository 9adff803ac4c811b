//! Dense numerical machinery shared by identification, control, estimation
//! and SLAM.
//!
//! - [`solve_box_qp`]: primal active-set method for
//!   `min ½xᵀHx + gᵀx  s.t.  lb ≤ x ≤ ub`.
//! - [`solve_bounded_nls`]: Levenberg-damped Gauss-Newton SQP for bounded
//!   nonlinear least squares, every iterate feasible.
//! - [`jacobian_fd`]: central finite differences.

mod fd;
mod nls;
mod qp;

pub use fd::{jacobian_fd, try_jacobian_fd};
pub use nls::{solve_bounded_nls, Bounds, LeastSquares, NlsOptions};
pub use qp::{solve_box_qp, solve_box_qp_warm, BoxQp};

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("active-set iteration limit of {0} exceeded")]
    IterationLimit(usize),
    #[error("Hessian is indefinite beyond the regularisation cap")]
    Indefinite,
    #[error("residual evaluation failed: {0}")]
    Evaluation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Projected-gradient KKT residual below tolerance.
    Converged,
    /// Step norm below tolerance.
    SmallStep,
    /// Iteration cap reached; the report holds the best iterate.
    MaxIterations,
    /// Line search failed even with maximal damping.
    Stalled,
}

impl Termination {
    pub fn is_converged(&self) -> bool {
        matches!(self, Termination::Converged | Termination::SmallStep)
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub cost: f64,
    pub kkt_residual: f64,
    pub termination: Termination,
    /// Cost of every accepted iterate, starting with the initial point.
    pub cost_history: Vec<f64>,
    /// Accepted iterates, only filled when requested in [`NlsOptions`].
    pub iterates: Vec<DVector<f64>>,
}

/// `‖P_box(x − grad) − x‖∞`, the first-order optimality measure for box constraints.
pub fn projected_gradient_norm(
    x: &DVector<f64>,
    grad: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let p = (x[i] - grad[i]).clamp(lb[i], ub[i]);
        worst = worst.max((p - x[i]).abs());
    }
    worst
}
