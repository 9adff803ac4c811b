use nalgebra::{DMatrix, DVector};

use super::SolverError;

/// Central-difference Jacobian: column `j` is `(f(x + h eⱼ) − f(x − h eⱼ)) / 2h`.
pub fn jacobian_fd<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    try_jacobian_fd(|x| Ok::<_, SolverError>(f(x)), x, h).expect("infallible evaluator")
}

/// Fallible variant of [`jacobian_fd`].
pub fn try_jacobian_fd<F, E>(f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>, E>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, E>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut xp = x.clone();
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j] - h;
        let fm = f(&xp)?;
        xp[j] = x[j];
        cols.push((fp - fm) / (2.0 * h));
    }
    let m = cols.first().map_or(0, |c| c.len());
    let mut jac = DMatrix::zeros(m, x.len());
    for (j, c) in cols.iter().enumerate() {
        jac.set_column(j, c);
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_linear_maps() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, 4.0, 0.25]);
        let x = DVector::from_column_slice(&[0.3, -1.1]);
        let j = jacobian_fd(|x| &a * x, &x, 1e-3);
        assert!((j - &a).amax() < 1e-12);
    }

    #[test]
    fn second_order_convergence_on_a_cubic() {
        let f = |x: &DVector<f64>| DVector::from_element(1, x[0].powi(3) + 2.0 * x[0]);
        let x = DVector::from_element(1, 0.7);
        let exact = 3.0 * 0.49 + 2.0;
        let e1 = (jacobian_fd(f, &x, 1e-2)[(0, 0)] - exact).abs();
        let e2 = (jacobian_fd(f, &x, 5e-3)[(0, 0)] - exact).abs();
        // error of a central difference on a cubic is exactly h²
        assert!((e1 / e2 - 4.0).abs() < 1e-3, "ratio {}", e1 / e2);
    }
}
