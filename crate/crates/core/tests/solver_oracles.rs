//! Box QP and bounded least squares against exhaustive enumeration.

mod common;

use canalnav_core::solver::{solve_box_qp, solve_bounded_nls, BoxQp, Bounds, LeastSquares, NlsOptions, SolverError};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn qp_strategy(n: usize) -> impl Strategy<Value = (BoxQp, usize)> {
    (
        1..=n,
        proptest::collection::vec(-2.0..2.0f64, n * n),
        proptest::collection::vec(-8.0..8.0f64, n),
        proptest::collection::vec(0.05..2.0f64, n),
        proptest::collection::vec(0.05..2.0f64, n),
    )
        .prop_map(move |(rank, a, g, lo, hi)| {
            let a = DMatrix::from_row_slice(n, n, &a).rows(0, rank).into_owned();
            let h = a.transpose() * a;
            let qp = BoxQp::new(
                h,
                DVector::from_vec(g),
                DVector::from_iterator(n, lo.into_iter().map(|v| -v)),
                DVector::from_vec(hi),
            );
            (qp, rank)
        })
}

/// `r(x) = A x − b`, the linear least-squares form of a QP with `H = AᵀA`.
struct Linear {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl LeastSquares for Linear {
    fn num_params(&self) -> usize {
        self.a.ncols()
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
        Ok(&self.a * x - &self.b)
    }

    fn jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>, SolverError> {
        Ok(self.a.clone())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn box_qp_matches_enumeration((qp, rank) in qp_strategy(5)) {
        let rep = solve_box_qp(&qp, 1e-12).unwrap();
        let (x_ref, obj_ref) = common::qp_by_enumeration(&qp);
        let obj = qp.objective(&rep.x);
        prop_assert!((obj - obj_ref).abs() <= 1e-8 * (1.0 + obj_ref.abs()), "objective {} vs {}", obj, obj_ref);
        prop_assert!(rep.x.iter().zip(qp.lb.iter().zip(qp.ub.iter())).all(|(v, (l, u))| *v >= *l && *v <= *u));
        if rank == 5 {
            prop_assert!((&rep.x - &x_ref).amax() <= 1e-8, "x {} vs {}", rep.x, x_ref);
        }
    }

    #[test]
    fn clipped_least_squares_matches_enumeration(
        a in proptest::collection::vec(-2.0..2.0f64, 8 * 4),
        b in proptest::collection::vec(-3.0..3.0f64, 8),
    ) {
        let a = DMatrix::from_row_slice(8, 4, &a);
        let b = DVector::from_vec(b);
        prop_assume!(a.clone().svd(false, false).singular_values.min() > 1e-2);
        let lb = DVector::from_element(4, -0.5);
        let ub = DVector::from_element(4, 0.5);
        let qp = BoxQp::new(a.transpose() * &a, -(a.transpose() * &b), lb.clone(), ub.clone());
        let (x_ref, _) = common::qp_by_enumeration(&qp);
        let problem = Linear { a, b };
        let rep = solve_bounded_nls(&problem, &DVector::zeros(4), &Bounds::new(lb, ub), &NlsOptions::default()).unwrap();
        prop_assert!((&rep.x - &x_ref).amax() <= 1e-7, "{} vs {}", rep.x, x_ref);
    }
}

#[test]
fn warm_start_reaches_the_same_minimiser() {
    use canalnav_core::solver::solve_box_qp_warm;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let h = a.transpose() * a + DMatrix::identity(6, 6) * 0.1;
        let g = DVector::from_fn(6, |_, _| rng.random_range(-5.0..5.0));
        let qp = BoxQp::new(h, g, DVector::from_element(6, -1.0), DVector::from_element(6, 1.0));
        let cold = solve_box_qp(&qp, 1e-12).unwrap();
        let start = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let warm = solve_box_qp_warm(&qp, Some(&start), 1e-12).unwrap();
        assert!((&cold.x - &warm.x).amax() < 1e-9);
    }
}
