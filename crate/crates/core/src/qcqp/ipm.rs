//! Mehrotra predictor-corrector interior-point method for dense convex QPs
//! `min ½xᵀHx + gᵀx  s.t.  Ax ≥ b`, followed by an active-set polish that
//! recovers exact complementarity.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

const MAX_ITER: usize = 200;
const FEAS_TOL: f64 = 1e-11;
const COMP_TOL: f64 = 1e-11;
const STEP_TO_BOUNDARY: f64 = 0.995;
/// Dual norm beyond which a stalled primal residual is read as infeasibility.
const DIVERGENCE: f64 = 1e13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: DVector<f64>,
    /// Row multipliers, nonnegative.
    pub multipliers: DVector<f64>,
    pub iterations: usize,
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Some(ch.solve(rhs));
    }
    let n = m.nrows();
    let mut shift = 1e-12 * (1.0 + m.diagonal().amax());
    for _ in 0..8 {
        let shifted = m + DMatrix::identity(n, n) * shift;
        if let Some(ch) = Cholesky::new(shifted) {
            return Some(ch.solve(rhs));
        }
        shift *= 100.0;
    }
    None
}

/// Largest step in `(0, 1]` keeping `v + α·dv` strictly positive.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(vi, di)| -vi / di)
        .fold(1.0, f64::min)
}

/// Solves the convex QP. `warm` seeds the primal iterate.
pub fn qp_solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    warm: Option<&DVector<f64>>,
) -> QpSolution {
    let n = g.len();
    let m = b.len();
    if m == 0 {
        let x = solve_spd(h, &(-g)).unwrap_or_else(|| DVector::zeros(n));
        let status = if x.iter().all(|v| v.is_finite()) {
            QpStatus::Optimal
        } else {
            QpStatus::MaxIter
        };
        return QpSolution {
            status,
            x,
            multipliers: DVector::zeros(0),
            iterations: 1,
        };
    }

    let scale_d = 1.0 + g.amax() + h.amax();
    let scale_p = 1.0 + b.amax();

    let mut x = warm.cloned().unwrap_or_else(|| DVector::zeros(n));
    let ax = a * &x;
    let mut s = DVector::from_fn(m, |i, _| (ax[i] - b[i]).max(1.0));
    let mut lam = DVector::from_element(m, 1.0);

    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;
    for iter in 0..MAX_ITER {
        iterations = iter + 1;
        let r_d = h * &x + g - a.tr_mul(&lam);
        let r_p = a * &x - &s - b;
        let mu = s.dot(&lam) / m as f64;

        if r_d.amax() <= FEAS_TOL * scale_d && r_p.amax() <= FEAS_TOL * scale_p && mu <= COMP_TOL {
            status = QpStatus::Optimal;
            break;
        }
        if lam.amax() > DIVERGENCE || s.amax() > DIVERGENCE {
            if r_p.amax() > 1e-6 * scale_p || lam.amax() > DIVERGENCE {
                status = QpStatus::Infeasible;
            }
            break;
        }

        let d = DVector::from_fn(m, |i, _| lam[i] / s[i]);
        let mut scaled = a.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= d[i].sqrt();
        }
        let kkt = h + scaled.tr_mul(&scaled);
        let Some(chol) = Cholesky::new(kkt.clone()).or_else(|| {
            let bump = 1e-12 * (1.0 + kkt.diagonal().amax());
            Cholesky::new(&kkt + DMatrix::identity(n, n) * bump)
        }) else {
            break;
        };

        // Newton direction for complementarity target r_c (entrywise s∘λ = r_c).
        let direction = |r_c: &DVector<f64>| {
            let t = DVector::from_fn(m, |i, _| (r_c[i] - lam[i] * r_p[i]) / s[i]);
            let dx = chol.solve(&(-&r_d + a.tr_mul(&t)));
            let adx = a * &dx;
            let ds = &adx + &r_p;
            let dlam = DVector::from_fn(m, |i, _| (r_c[i] - lam[i] * ds[i]) / s[i]);
            (dx, ds, dlam)
        };

        let sl = s.component_mul(&lam);
        let (_, ds_aff, dl_aff) = direction(&(-&sl));
        let alpha_aff = max_step(&s, &ds_aff).min(max_step(&lam, &dl_aff));
        let mu_aff = (&s + &ds_aff * alpha_aff).dot(&(&lam + &dl_aff * alpha_aff)) / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        let r_c = DVector::from_fn(m, |i, _| -sl[i] + sigma * mu - ds_aff[i] * dl_aff[i]);
        let (dx, ds, dlam) = direction(&r_c);
        let alpha = (STEP_TO_BOUNDARY * max_step(&s, &ds).min(max_step(&lam, &dlam))).min(1.0);

        x += &dx * alpha;
        s += &ds * alpha;
        lam += &dlam * alpha;
    }

    if status != QpStatus::Infeasible {
        if let Some((xp, lp)) = polish(h, g, a, b, &x, &s, &lam) {
            x = xp;
            lam = lp;
            status = QpStatus::Optimal;
        }
    }
    QpSolution {
        status,
        x,
        multipliers: lam,
        iterations,
    }
}

/// Re-solves the equality-constrained KKT system on the rows the
/// interior-point iterate identifies as active. Returns `None` when the
/// guess is not a valid KKT point.
fn polish(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    s: &DVector<f64>,
    lam: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = g.len();
    let m = b.len();
    let active: Vec<usize> = (0..m).filter(|&i| lam[i] > s[i]).collect();
    let k = active.len();
    if k > n {
        return None;
    }
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-g));
    for (j, &i) in active.iter().enumerate() {
        for c in 0..n {
            kkt[(n + j, c)] = a[(i, c)];
            kkt[(c, n + j)] = a[(i, c)];
        }
        rhs[n + j] = b[i];
    }
    let lu: LU<f64, Dyn, Dyn> = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    // one step of iterative refinement
    let resid = &rhs - &kkt * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let xp = sol.rows(0, n).into_owned();
    let mut lp = DVector::zeros(m);
    let tol = 1e-9 * (1.0 + lam.amax());
    for (j, &i) in active.iter().enumerate() {
        // the KKT block was built with +Aᵀ, so multipliers come out negated
        let mult = -sol[n + j];
        if mult < -tol {
            return None;
        }
        lp[i] = mult.max(0.0);
    }
    let slack = a * &xp - b;
    let feas_tol = 1e-9 * (1.0 + b.amax());
    if slack.iter().any(|&v| v < -feas_tol) {
        return None;
    }
    // reject if the polish moved far from the interior-point estimate
    if (&xp - x).amax() > 1e-4 * (1.0 + x.amax()) {
        return None;
    }
    Some((xp, lp))
}
