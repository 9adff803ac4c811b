use nalgebra::{DMatrix, DVector};

use super::{projected_gradient_norm, SolveReport, SolverError, Termination};

/// `min ½xᵀHx + gᵀx  s.t.  lb ≤ x ≤ ub`.
#[derive(Debug, Clone)]
pub struct BoxQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl BoxQp {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        Self { h, g, lb, ub }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x + &self.g
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.dim();
        if self.h.nrows() != n || self.h.ncols() != n || self.lb.len() != n || self.ub.len() != n {
            return Err(SolverError::Dimension(format!(
                "H is {}x{}, g/lb/ub have {}, {}, {} entries",
                self.h.nrows(),
                self.h.ncols(),
                n,
                self.lb.len(),
                self.ub.len()
            )));
        }
        let scale = 1.0 + self.h.amax();
        for i in 0..n {
            if !(self.lb[i] <= self.ub[i]) {
                return Err(SolverError::InvalidProblem(format!(
                    "lower bound exceeds upper bound at index {i}"
                )));
            }
            for j in 0..i {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > 1e-10 * scale {
                    return Err(SolverError::InvalidProblem("H is not symmetric".into()));
                }
            }
        }
        if self.h.iter().chain(self.g.iter()).any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidProblem("non-finite entries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Solves a box-constrained QP from the origin projected onto the box.
pub fn solve_box_qp(p: &BoxQp, tol: f64) -> Result<SolveReport, SolverError> {
    solve_box_qp_warm(p, None, tol)
}

/// Primal active-set method.
///
/// Iterates stay feasible. Each iteration takes a Newton step on the free
/// variables, truncated at the first bound it hits (which then joins the
/// working set); after a full step the variable with the most negative bound
/// multiplier is released. When `H` restricted to the free set is not
/// numerically positive definite a growing ridge is added, up to a cap.
pub fn solve_box_qp_warm(
    p: &BoxQp,
    x0: Option<&DVector<f64>>,
    tol: f64,
) -> Result<SolveReport, SolverError> {
    p.validate()?;
    let n = p.dim();
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.clone(),
        Some(x0) => {
            return Err(SolverError::Dimension(format!(
                "warm start has {} entries, expected {n}",
                x0.len()
            )))
        }
        None => DVector::zeros(n),
    };
    for i in 0..n {
        x[i] = x[i].clamp(p.lb[i], p.ub[i]);
    }

    let mut grad = p.gradient(&x);
    let mut state = vec![Bound::Free; n];
    for i in 0..n {
        if p.lb[i] == p.ub[i] || (x[i] <= p.lb[i] && grad[i] > 0.0) {
            state[i] = Bound::Lower;
        } else if x[i] >= p.ub[i] && grad[i] < 0.0 {
            state[i] = Bound::Upper;
        }
    }

    let scale = 1.0 + (0..n).fold(0.0f64, |m, i| m.max(p.h[(i, i)].abs()));
    let multiplier_tol = tol * 1e-2;
    let max_iter = 50 + 10 * n;
    let mut free: Vec<usize> = Vec::with_capacity(n);

    for iter in 0..max_iter {
        free.clear();
        free.extend((0..n).filter(|&i| state[i] == Bound::Free));

        let mut step = DVector::zeros(n);
        if !free.is_empty() {
            let nf = free.len();
            let mut hff = DMatrix::zeros(nf, nf);
            let mut rhs = DVector::zeros(nf);
            for (a, &i) in free.iter().enumerate() {
                rhs[a] = -grad[i];
                for (b, &j) in free.iter().enumerate() {
                    hff[(a, b)] = p.h[(i, j)];
                }
            }
            let sol = regularized_solve(hff, &rhs, scale)?;
            for (a, &i) in free.iter().enumerate() {
                step[i] = sol[a];
            }
        }

        // ratio test against the bounds of free variables
        let mut alpha = 1.0;
        let mut blocking: Option<(usize, Bound)> = None;
        for &i in &free {
            let s = step[i];
            if s < 0.0 && p.lb[i].is_finite() {
                let a = (p.lb[i] - x[i]) / s;
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some((i, Bound::Lower));
                }
            } else if s > 0.0 && p.ub[i].is_finite() {
                let a = (p.ub[i] - x[i]) / s;
                if a < alpha {
                    alpha = a.max(0.0);
                    blocking = Some((i, Bound::Upper));
                }
            }
        }
        if blocking.is_none() && free.iter().any(|&i| !step[i].is_finite()) {
            return Err(SolverError::Indefinite);
        }
        for &i in &free {
            x[i] = (x[i] + alpha * step[i]).clamp(p.lb[i], p.ub[i]);
        }
        if let Some((i, b)) = blocking {
            x[i] = if b == Bound::Lower { p.lb[i] } else { p.ub[i] };
            state[i] = b;
            grad = p.gradient(&x);
            continue;
        }

        grad = p.gradient(&x);
        // release the most violated bound multiplier
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n {
            if p.lb[i] == p.ub[i] {
                continue;
            }
            let lambda = match state[i] {
                Bound::Free => continue,
                Bound::Lower => grad[i],
                Bound::Upper => -grad[i],
            };
            if lambda < -multiplier_tol && worst.is_none_or(|(_, w)| lambda < w) {
                worst = Some((i, lambda));
            }
        }
        match worst {
            Some((i, _)) => state[i] = Bound::Free,
            None => {
                let kkt = projected_gradient_norm(&x, &grad, &p.lb, &p.ub);
                if kkt > tol.max(1e-12 * scale) && !free.is_empty() {
                    // inexact free-subspace solve, polish once more
                    continue;
                }
                let cost = p.objective(&x);
                return Ok(SolveReport {
                    cost,
                    kkt_residual: kkt,
                    iterations: iter + 1,
                    termination: Termination::Converged,
                    cost_history: vec![cost],
                    iterates: Vec::new(),
                    x,
                });
            }
        }
    }
    Err(SolverError::IterationLimit(max_iter))
}

/// Cholesky solve with a ridge that grows until the factorisation succeeds.
fn regularized_solve(
    h: DMatrix<f64>,
    rhs: &DVector<f64>,
    scale: f64,
) -> Result<DVector<f64>, SolverError> {
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    let mut ridge = 1e-12 * scale;
    let cap = 1e-4 * scale;
    while ridge <= cap {
        let mut hr = h.clone();
        for i in 0..hr.nrows() {
            hr[(i, i)] += ridge;
        }
        if let Some(ch) = hr.cholesky() {
            return Ok(ch.solve(rhs));
        }
        ridge *= 100.0;
    }
    Err(SolverError::Indefinite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn qp(h: DMatrix<f64>, g: &[f64], lb: f64, ub: f64) -> BoxQp {
        let n = g.len();
        BoxQp::new(
            h,
            DVector::from_column_slice(g),
            DVector::from_element(n, lb),
            DVector::from_element(n, ub),
        )
    }

    #[test]
    fn interior_minimum() {
        let r = solve_box_qp(&qp(DMatrix::identity(2, 2), &[0.0, 0.0], -1.0, 1.0), 1e-10).unwrap();
        assert_relative_eq!(r.x, DVector::from_column_slice(&[0.0, 0.0]));
        assert_eq!(r.termination, Termination::Converged);
    }

    #[test]
    fn projection_of_unconstrained_minimum() {
        let r = solve_box_qp(&qp(DMatrix::identity(2, 2), &[-1.0, -1.0], -0.5, 0.5), 1e-10).unwrap();
        assert_relative_eq!(r.x, DVector::from_column_slice(&[0.5, 0.5]), epsilon = 1e-14);
        assert!(r.kkt_residual <= 1e-10);
    }

    #[test]
    fn coupled_hessian_with_one_active_bound() {
        // min ½(x0² + x1² + x0 x1) - 3 x0, x0 ≤ 1: minimiser x0 = 1, x1 = -0.5
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let p = BoxQp::new(
            h,
            DVector::from_column_slice(&[-3.0, 0.0]),
            DVector::from_column_slice(&[-10.0, -10.0]),
            DVector::from_column_slice(&[1.0, 10.0]),
        );
        let r = solve_box_qp(&p, 1e-12).unwrap();
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.x[1], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn singular_psd_hessian_is_regularised() {
        // H = [1 1; 1 1] (rank one), bounded box keeps the problem bounded
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = solve_box_qp(&qp(h, &[-1.0, -1.0], -2.0, 2.0), 1e-6).unwrap();
        assert_relative_eq!(r.x[0] + r.x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn rejects_inconsistent_bounds_and_asymmetry() {
        let mut p = qp(DMatrix::identity(2, 2), &[0.0, 0.0], -1.0, 1.0);
        p.lb[1] = 2.0;
        assert!(matches!(solve_box_qp(&p, 1e-8), Err(SolverError::InvalidProblem(_))));
        let p = qp(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]), &[0.0, 0.0], -1.0, 1.0);
        assert!(solve_box_qp(&p, 1e-8).is_err());
    }

    #[test]
    fn indefinite_hessian_with_unbounded_box_fails() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = qp(h, &[0.0, 0.0], f64::NEG_INFINITY, f64::INFINITY);
        assert!(solve_box_qp(&p, 1e-8).is_err());
    }

    #[test]
    fn fixed_variables_stay_fixed() {
        let mut p = qp(DMatrix::identity(3, 3), &[-1.0, -1.0, -1.0], -5.0, 5.0);
        p.lb[1] = 0.25;
        p.ub[1] = 0.25;
        let r = solve_box_qp(&p, 1e-12).unwrap();
        assert_relative_eq!(r.x, DVector::from_column_slice(&[1.0, 0.25, 1.0]), epsilon = 1e-14);
    }
}
