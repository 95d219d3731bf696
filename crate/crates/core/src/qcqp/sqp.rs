use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::time::Instant;

use super::ipm::{qp_solve, QpStatus};
use super::{QcqpProblem, SolveResult, SolveStatus, SolverSettings};

/// Armijo sufficient-decrease constant for the merit line search.
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;

struct Merit<'a> {
    problem: &'a QcqpProblem,
    penalty: f64,
}

impl Merit<'_> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let violation: f64 = self.problem.constraint_values(x).iter().map(|c| (-c).max(0.0)).sum();
        self.problem.objective(x) + self.penalty * violation
    }
}

/// Lagrangian Hessian made positive definite: negative eigenvalues are
/// mirrored, then the spectrum is floored at `floor`.
fn floored_hessian(problem: &QcqpProblem, quad_multipliers: &[f64], floor: f64) -> DMatrix<f64> {
    let mut b = problem.hessian.clone();
    let mut curved = false;
    for (row, &lam) in problem.quadratic.iter().zip(quad_multipliers) {
        if lam != 0.0 {
            b -= &row.hessian * lam;
            curved = true;
        }
    }
    b = (&b + b.transpose()) * 0.5;
    if !curved {
        if let Some(ch) = nalgebra::Cholesky::new(b.clone()) {
            let diag_min = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &v| a.min(v));
            if diag_min * diag_min > floor {
                return b;
            }
        }
    }
    let eig = SymmetricEigen::new(b);
    let vals = eig.eigenvalues.map(|v| v.abs().max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn kkt_measures(problem: &QcqpProblem, x: &DVector<f64>, lam: &DVector<f64>) -> (f64, f64) {
    let cons = problem.constraint_values(x);
    let violation = cons.iter().fold(0.0, |acc: f64, &c| acc.max(-c));
    let stationarity = problem.stationarity(x, lam);
    let dual_infeas = lam.iter().fold(0.0, |acc: f64, &l| acc.max(-l));
    let complementarity = cons
        .iter()
        .zip(lam.iter())
        .fold(0.0, |acc: f64, (c, l)| acc.max((c * l).abs()));
    (stationarity.max(dual_infeas).max(complementarity), violation)
}

/// Sequential quadratic programming with an ℓ1 merit line search.
///
/// Quadratic rows are linearized at each iterate; the subproblem Hessian is
/// the Lagrangian Hessian floored at `settings.hessian_reg`.
pub fn solve(problem: &QcqpProblem, warm_start: Option<&DVector<f64>>, settings: &SolverSettings) -> SolveResult {
    let start = Instant::now();
    let n = problem.dim();
    let ml = problem.num_linear();
    let mq = problem.quadratic.len();
    let rows = ml + mq;

    let mut x = match warm_start {
        Some(w) if w.len() == n && w.iter().all(|v| v.is_finite()) => w.clone(),
        _ => DVector::zeros(n),
    };
    let mut lam = DVector::zeros(rows);
    let mut penalty = settings.merit_penalty;
    let mut merit_history = Vec::new();

    let finish =
        |status: SolveStatus, x: DVector<f64>, lam: DVector<f64>, iterations: usize, history: Vec<(f64, f64)>| {
            let (kkt, violation) = kkt_measures(problem, &x, &lam);
            SolveResult {
                status,
                objective: problem.objective(&x),
                kkt_residual: kkt,
                constraint_violation: violation,
                iterations,
                solution: x,
                multipliers: lam,
                merit_history: history,
                wall_time: start.elapsed().as_secs_f64(),
            }
        };

    for iter in 0..settings.max_iter {
        let grad = problem.objective_grad(&x);
        let quad_lam: Vec<f64> = lam.rows(ml, mq).iter().copied().collect();
        let hess = floored_hessian(problem, &quad_lam, settings.hessian_reg);

        // Linearized rows: J d ≥ −c(x).
        let jac = problem.constraint_jacobian(&x);
        let cons = problem.constraint_values(&x);
        let violation: f64 = cons.iter().map(|c| (-c).max(0.0)).sum();
        let qp = qp_solve(&hess, &grad, &jac, &(-&cons), None);
        match qp.status {
            QpStatus::Infeasible => {
                return finish(SolveStatus::Infeasible, x, lam, iter + 1, merit_history);
            }
            QpStatus::MaxIter if !qp.x.iter().all(|v| v.is_finite()) => {
                return finish(SolveStatus::MaxIter, x, lam, iter + 1, merit_history);
            }
            _ => {}
        }
        let d = qp.x;
        let lam_qp = qp.multipliers;

        penalty = penalty.max(2.0 * lam_qp.amax() + 1.0);
        let merit = Merit { problem, penalty };
        let phi0 = merit.value(&x);
        let slope = grad.dot(&d) - penalty * violation;

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= MIN_STEP {
            let trial = &x + &d * alpha;
            let phi = merit.value(&trial);
            if phi <= phi0 + ARMIJO * alpha * slope.min(0.0) + 1e-14 * phi0.abs() {
                accepted = Some((trial, phi));
                break;
            }
            alpha *= settings.line_search_shrink;
        }
        let Some((x_new, phi_new)) = accepted else {
            return finish(SolveStatus::MaxIter, x, lam, iter + 1, merit_history);
        };

        x = x_new;
        lam = if alpha == 1.0 {
            lam_qp
        } else {
            &lam + (&lam_qp - &lam) * alpha
        };
        merit_history.push((phi0, phi_new));

        let (kkt, violation) = kkt_measures(problem, &x, &lam);
        if kkt <= settings.kkt_tol && violation <= settings.con_tol {
            return finish(SolveStatus::Optimal, x, lam, iter + 1, merit_history);
        }
    }
    finish(SolveStatus::MaxIter, x, lam, settings.max_iter, merit_history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcqp::{qp_solve, QuadraticRow};
    use approx::assert_abs_diff_eq;

    /// min ‖p − (0.5, 0)‖² s.t. ‖p‖² ≥ 1.
    fn circle_problem() -> QcqpProblem {
        let mut p = QcqpProblem::unconstrained(DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![-1.0, 0.0]), 0.25);
        p.quadratic.push(QuadraticRow {
            hessian: DMatrix::identity(2, 2) * 2.0,
            gradient: DVector::zeros(2),
            constant: -1.0,
        });
        p
    }

    #[test]
    fn projects_onto_circle() {
        let problem = circle_problem();
        let warm = DVector::from_vec(vec![0.6, 0.1]);
        let res = solve(&problem, Some(&warm), &SolverSettings::default());
        assert_eq!(res.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(res.solution, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-6);
        assert_abs_diff_eq!(res.objective, 0.25, epsilon = 1e-8);
        // stationarity: 2(p − c) = λ·2p → λ = 0.5
        assert_abs_diff_eq!(res.multipliers[0], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn convex_qp_matches_qp_solve() {
        let h = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let g = DVector::from_vec(vec![-1.0, 4.0]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 0.5]);
        let b = DVector::from_vec(vec![1.0, -3.0]);
        let direct = qp_solve(&h, &g, &a, &b, None);
        let problem = QcqpProblem {
            hessian: h,
            gradient: g,
            constant: 0.0,
            linear_a: a,
            linear_b: b,
            quadratic: vec![],
        };
        let res = solve(&problem, None, &SolverSettings::default());
        assert_eq!(res.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(res.solution, direct.x, epsilon = 1e-8);
    }

    #[test]
    fn merit_is_monotone_and_deterministic() {
        let problem = circle_problem();
        let warm = DVector::from_vec(vec![0.2, 0.3]);
        let a = solve(&problem, Some(&warm), &SolverSettings::default());
        let b = solve(&problem, Some(&warm), &SolverSettings::default());
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.solution, b.solution);
        assert!(!a.merit_history.is_empty());
        for &(before, after) in &a.merit_history {
            assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn reports_infeasible_linear_rows() {
        let mut problem = QcqpProblem::unconstrained(DMatrix::identity(1, 1), DVector::zeros(1), 0.0);
        problem.linear_a = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        problem.linear_b = DVector::from_vec(vec![1.0, 0.0]);
        let res = solve(&problem, None, &SolverSettings::default());
        assert_eq!(res.status, SolveStatus::Infeasible);
    }
}
