//! Dense solver for QCQPs with a convex quadratic objective, linear
//! inequality rows and (possibly nonconvex) quadratic inequality rows.
//!
//! Every constraint is written in the "≥ 0" direction:
//!
//! ```text
//! minimize    ½ xᵀHx + gᵀx + c
//! subject to  A x ≥ b
//!             ½ xᵀP_i x + q_iᵀx + r_i ≥ 0
//! ```

mod ipm;
mod sqp;

pub use ipm::{qp_solve, QpSolution, QpStatus};
pub use sqp::solve;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One quadratic row `½ xᵀPx + qᵀx + r ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticRow {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constant: f64,
}

impl QuadraticRow {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x) + self.constant
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.hessian * x + &self.gradient
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constant: f64,
    /// Linear rows `a x ≥ b`.
    pub linear_a: DMatrix<f64>,
    pub linear_b: DVector<f64>,
    pub quadratic: Vec<QuadraticRow>,
}

impl QcqpProblem {
    pub fn unconstrained(hessian: DMatrix<f64>, gradient: DVector<f64>, constant: f64) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            constant,
            linear_a: DMatrix::zeros(0, n),
            linear_b: DVector::zeros(0),
            quadratic: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn num_linear(&self) -> usize {
        self.linear_b.len()
    }

    pub fn num_rows(&self) -> usize {
        self.num_linear() + self.quadratic.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.hessian.shape() != (n, n) {
            return Err(Error::Config(format!(
                "hessian shape {:?} for dimension {n}",
                self.hessian.shape()
            )));
        }
        if self.linear_a.ncols() != n || self.linear_a.nrows() != self.linear_b.len() {
            return Err(Error::Config("linear rows do not match the decision dimension".into()));
        }
        for (i, row) in self.quadratic.iter().enumerate() {
            if row.hessian.shape() != (n, n) || row.gradient.len() != n {
                return Err(Error::Config(format!(
                    "quadratic row {i} does not match the decision dimension"
                )));
            }
        }
        let finite = self.hessian.iter().all(|v| v.is_finite())
            && self.gradient.iter().all(|v| v.is_finite())
            && self.linear_a.iter().all(|v| v.is_finite())
            && self.linear_b.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("problem data is not finite".into()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x) + self.constant
    }

    pub fn objective_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.hessian * x + &self.gradient
    }

    /// All constraint values, linear rows first. Feasible means every entry is ≥ 0.
    pub fn constraint_values(&self, x: &DVector<f64>) -> DVector<f64> {
        let lin = &self.linear_a * x - &self.linear_b;
        DVector::from_iterator(
            self.num_rows(),
            lin.iter().copied().chain(self.quadratic.iter().map(|q| q.value(x))),
        )
    }

    /// Largest violation over all rows (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.constraint_values(x).iter().fold(0.0, |acc, &c| acc.max(-c))
    }

    /// Constraint Jacobian, linear rows first.
    pub fn constraint_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let ml = self.num_linear();
        let mut jac = DMatrix::zeros(self.num_rows(), n);
        jac.rows_mut(0, ml).copy_from(&self.linear_a);
        for (i, q) in self.quadratic.iter().enumerate() {
            jac.row_mut(ml + i).copy_from(&q.grad(x).transpose());
        }
        jac
    }

    /// Infinity norm of `∇f − Jᵀλ`.
    pub fn stationarity(&self, x: &DVector<f64>, multipliers: &DVector<f64>) -> f64 {
        let r = self.objective_grad(x) - self.constraint_jacobian(x).tr_mul(multipliers);
        r.amax()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub kkt_tol: f64,
    pub con_tol: f64,
    pub line_search_shrink: f64,
    /// Starting ℓ1 penalty; raised to `2‖λ‖∞ + 1` whenever smaller.
    pub merit_penalty: f64,
    /// Eigenvalue floor applied to subproblem Hessians.
    pub hessian_reg: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 100,
            kkt_tol: 1e-7,
            con_tol: 1e-7,
            line_search_shrink: 0.5,
            merit_penalty: 1.0,
            hessian_reg: 1e-9,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.kkt_tol, self.con_tol, self.merit_penalty, self.hessian_reg];
        if self.max_iter == 0 || positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("solver settings must be positive".into()));
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return Err(Error::Config("line search shrink must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub solution: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub constraint_violation: f64,
    pub iterations: usize,
    /// One per constraint row, linear rows first.
    pub multipliers: DVector<f64>,
    /// `(before, after)` merit values of each accepted step, both measured
    /// with the penalty in force at that step.
    pub merit_history: Vec<(f64, f64)>,
    pub wall_time: f64,
}
