use nalgebra::{DMatrix, DVector};

use super::qp::{solve_box_qp_warm, BoxQp};
use super::{projected_gradient_norm, try_jacobian_fd, SolveReport, SolverError, Termination};

/// A nonlinear least-squares objective `½‖r(x)‖²`.
pub trait LeastSquares {
    fn num_params(&self) -> usize;

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, SolverError>;

    /// Jacobian of the residuals; central differences unless overridden.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, SolverError> {
        try_jacobian_fd(|x| self.residuals(x), x, 1e-6)
    }

    /// Residuals and Jacobian together; override when they share work.
    fn linearize(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), SolverError> {
        Ok((self.residuals(x)?, self.jacobian(x)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Bounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Self {
        Self { lower, upper }
    }

    pub fn unbounded(n: usize) -> Self {
        Self::new(
            DVector::from_element(n, f64::NEG_INFINITY),
            DVector::from_element(n, f64::INFINITY),
        )
    }

    pub fn uniform(n: usize, lo: f64, hi: f64) -> Self {
        Self::new(DVector::from_element(n, lo), DVector::from_element(n, hi))
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlsOptions {
    pub max_iterations: usize,
    pub kkt_tol: f64,
    pub step_tol: f64,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo: f64,
    pub qp_tol: f64,
    pub max_backtracks: usize,
    pub record_iterates: bool,
}

impl Default for NlsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            kkt_tol: 1e-6,
            step_tol: 1e-8,
            armijo: 1e-4,
            qp_tol: 1e-10,
            max_backtracks: 30,
            record_iterates: false,
        }
    }
}

/// Gauss-Newton SQP for `min ½‖r(x)‖²  s.t.  lb ≤ x ≤ ub`.
///
/// Each iteration solves the box QP with `H = JᵀJ + λ diag(JᵀJ)` and
/// `g = Jᵀr` over the shifted bounds `lb − x ≤ d ≤ ub − x`, then backtracks
/// until the Armijo condition holds. A failed line search raises the
/// Levenberg damping `λ`; an accepted step lowers it. All iterates are
/// feasible.
pub fn solve_bounded_nls<P: LeastSquares + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    bounds: &Bounds,
    opts: &NlsOptions,
) -> Result<SolveReport, SolverError> {
    let n = problem.num_params();
    if x0.len() != n || bounds.lower.len() != n || bounds.upper.len() != n {
        return Err(SolverError::Dimension(format!(
            "expected {n} parameters, got x0={}, bounds={}/{}",
            x0.len(),
            bounds.lower.len(),
            bounds.upper.len()
        )));
    }
    if !bounds.contains(x0) {
        return Err(SolverError::InvalidProblem(
            "initial guess lies outside the bounds".into(),
        ));
    }

    let mut x = x0.clone();
    let (mut r, mut jac) = problem.linearize(&x)?;
    if r.is_empty() {
        return Err(SolverError::InvalidProblem("no residuals".into()));
    }
    let mut cost = 0.5 * r.norm_squared();
    if !cost.is_finite() {
        return Err(SolverError::Evaluation("non-finite initial cost".into()));
    }
    let mut history = vec![cost];
    let mut iterates = if opts.record_iterates {
        vec![x.clone()]
    } else {
        Vec::new()
    };
    let mut damping = 0.0f64;
    let mut termination = Termination::MaxIterations;
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        let grad = jac.tr_mul(&r);
        kkt = projected_gradient_norm(&x, &grad, &bounds.lower, &bounds.upper);
        if kkt <= opts.kkt_tol {
            termination = Termination::Converged;
            break;
        }
        iterations += 1;

        let jtj = jac.tr_mul(&jac);
        let diag_max = (0..n).fold(0.0f64, |m, i| m.max(jtj[(i, i)]));
        let ridge = 1e-12 * (1.0 + diag_max);
        let mut accepted = false;
        let mut small_step = false;
        while !accepted {
            let mut h = jtj.clone();
            for i in 0..n {
                h[(i, i)] += damping * jtj[(i, i)].max(1e-9 * (1.0 + diag_max)) + ridge;
            }
            let qp = BoxQp::new(h, grad.clone(), &bounds.lower - &x, &bounds.upper - &x);
            let step = solve_box_qp_warm(&qp, None, opts.qp_tol)?.x;
            if step.amax() < opts.step_tol {
                small_step = true;
                break;
            }
            let slope = grad.dot(&step);
            let mut alpha = 1.0;
            for _ in 0..opts.max_backtracks {
                let trial = bounds.project(&(&x + &step * alpha));
                let r_trial = problem.residuals(&trial)?;
                let c_trial = 0.5 * r_trial.norm_squared();
                if c_trial.is_finite() && c_trial <= cost + opts.armijo * alpha * slope {
                    x = trial;
                    cost = c_trial;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if accepted {
                damping = if damping < 1e-9 { 0.0 } else { damping * 0.1 };
            } else {
                damping = if damping == 0.0 { 1e-4 } else { damping * 10.0 };
                if damping > 1e8 {
                    break;
                }
            }
        }
        if small_step {
            termination = Termination::SmallStep;
            break;
        }
        if !accepted {
            termination = Termination::Stalled;
            break;
        }
        history.push(cost);
        if opts.record_iterates {
            iterates.push(x.clone());
        }
        let lin = problem.linearize(&x)?;
        r = lin.0;
        jac = lin.1;
    }
    if termination == Termination::MaxIterations || termination == Termination::SmallStep {
        let grad = jac.tr_mul(&r);
        kkt = projected_gradient_norm(&x, &grad, &bounds.lower, &bounds.upper);
        if kkt <= opts.kkt_tol {
            termination = Termination::Converged;
        }
    }

    Ok(SolveReport {
        x,
        iterations,
        cost,
        kkt_residual: kkt,
        termination,
        cost_history: history,
        iterates,
    })
}
