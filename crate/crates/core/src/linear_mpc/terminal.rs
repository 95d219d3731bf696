//! Terminal ingredients: LQR gain from the discrete Riccati equation and the
//! Lyapunov terminal weight for the closed loop `A_d + B_d·K`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const DARE_MAX_ITER: usize = 200_000;
const DARE_STEP_TOL: f64 = 1e-13;
/// Relative residual accepted for the Riccati solution.
pub const DARE_RESIDUAL_TOL: f64 = 1e-10;

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// `AᵀPA − P − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q` in Frobenius norm.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    match riccati_map(a, b, q, r, p) {
        Some(next) => (next - p).norm(),
        None => f64::INFINITY,
    }
}

fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let pa = p * a;
    let pb = p * b;
    let s = r + b.tr_mul(&pb);
    let gain = s.cholesky()?.solve(&pb.tr_mul(a));
    Some(symmetrize(&(a.tr_mul(&pa) - a.tr_mul(&pb) * gain + q)))
}

/// Stabilizing Riccati solution by fixed-point (value) iteration from `P = Q`.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.shape() != (n, n) || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Config("Riccati data has inconsistent shapes".into()));
    }
    let mut p = symmetrize(q);
    for iter in 0..DARE_MAX_ITER {
        let next =
            riccati_map(a, b, q, r, &p).ok_or_else(|| Error::Config("R + BᵀPB is not positive definite".into()))?;
        let step = (&next - &p).norm();
        let scale = 1.0f64.max(next.norm());
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonConvergence {
                what: "Riccati iteration diverged".into(),
                iterations: iter + 1,
            });
        }
        if step <= DARE_STEP_TOL * scale && dare_residual(a, b, q, r, &p) <= DARE_RESIDUAL_TOL * scale {
            return Ok(p);
        }
    }
    Err(Error::NonConvergence {
        what: "Riccati fixed-point iteration".into(),
        iterations: DARE_MAX_ITER,
    })
}

/// Gain `K = −(R + BᵀPB)⁻¹BᵀPA`, so that `v = K·z`.
pub fn gain_from_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let pb = p * b;
    let s = r + b.tr_mul(&pb);
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Config("R + BᵀPB is not positive definite".into()))?;
    Ok(-chol.solve(&pb.tr_mul(a)))
}

pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = solve_dare(a, b, q, r)?;
    gain_from_riccati(a, b, r, &p)
}

/// `Q̄ − ΦᵀQ̄Φ − W` in Frobenius norm.
pub fn lyapunov_residual(phi: &DMatrix<f64>, qbar: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    (qbar - phi.tr_mul(&(qbar * phi)) - w).norm()
}

/// Solves `X − ΦᵀXΦ = W` through the vectorized system
/// `(I − Φᵀ⊗Φᵀ)·vec(X) = vec(W)` with two rounds of iterative refinement.
pub fn solve_discrete_lyapunov(phi: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = phi.nrows();
    let rho = spectral_radius(phi);
    if !(rho < 1.0) {
        return Err(Error::Config(format!(
            "closed-loop spectral radius {rho} is not below one"
        )));
    }
    let pt = phi.transpose();
    let kron = pt.kronecker(&pt);
    let system = DMatrix::identity(n * n, n * n) - kron;
    let lu = system.lu();
    let solve = |rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let v = DVector::from_column_slice(rhs.as_slice());
        let x = lu
            .solve(&v)
            .ok_or_else(|| Error::Config("Lyapunov system is singular".into()))?;
        Ok(DMatrix::from_column_slice(n, n, x.as_slice()))
    };
    let mut x = symmetrize(&solve(w)?);
    for _ in 0..2 {
        let resid = w - (&x - phi.tr_mul(&(&x * phi)));
        x += symmetrize(&solve(&resid)?);
    }
    Ok(x)
}

/// Terminal weight `Q̄` with `Q̄ − (A+BK)ᵀQ̄(A+BK) = Q + KᵀRK`.
pub fn terminal_weight(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let phi = a + b * k;
    let w = q + k.tr_mul(&(r * k));
    solve_discrete_lyapunov(&phi, &w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_mpc::model::{build_continuous, discretize};
    use approx::assert_abs_diff_eq;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_riccati_golden_ratio() {
        let p = solve_dare(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(p[(0, 0)], golden, epsilon = 1e-10);
        let k = lqr_gain(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert_abs_diff_eq!(k[(0, 0)], -(golden - 1.0), epsilon = 1e-10);
    }

    #[test]
    fn no_actuation_gives_zero_gain() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let b = DMatrix::zeros(2, 1);
        let k = lqr_gain(&a, &b, &DMatrix::identity(2, 2), &scalar(1.0)).unwrap();
        assert_eq!(k, DMatrix::zeros(1, 2));
    }

    #[test]
    fn scalar_lyapunov_geometric_series() {
        let x = solve_discrete_lyapunov(&scalar(0.5), &scalar(1.0)).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 4.0 / 3.0, epsilon = 1e-12);
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = solve_discrete_lyapunov(&DMatrix::zeros(2, 2), &w).unwrap();
        assert_abs_diff_eq!(x, w, epsilon = 1e-15);
        assert!(solve_discrete_lyapunov(&scalar(1.2), &scalar(1.0)).is_err());
    }

    #[test]
    fn flat_model_terminal_weight_equals_riccati_solution() {
        let m = discretize(&build_continuous(), 0.05);
        let q = DMatrix::identity(14, 14);
        let r = DMatrix::identity(4, 4);
        let p = solve_dare(&m.a_d, &m.b_d, &q, &r).unwrap();
        let k = gain_from_riccati(&m.a_d, &m.b_d, &r, &p).unwrap();
        let phi = &m.a_d + &m.b_d * &k;
        assert!(spectral_radius(&phi) < 1.0);
        let qbar = terminal_weight(&m.a_d, &m.b_d, &k, &q, &r).unwrap();
        let w = &q + k.tr_mul(&(&r * &k));
        assert!(lyapunov_residual(&phi, &qbar, &w) <= 1e-8);
        assert!((&qbar - &p).norm() <= 1e-8 * p.norm());
    }
}
