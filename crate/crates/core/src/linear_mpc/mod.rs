//! Linear MPC on the flat model with discrete CBF (or plain distance)
//! safety rows, assembled as a condensed QCQP over the stacked inputs.

pub mod model;
mod problem;
pub mod terminal;

pub use model::{build_continuous, discretize, LinearModel, INPUT_DIM};
pub use problem::{
    build_qcqp, cbf_value, goal_shift, goal_unshift, safety_residuals, shift_plan, terminal_invariance_check,
    MpcProblem, Prediction, RowLayout, TerminalInvarianceReport,
};
pub use terminal::{lqr_gain, solve_dare, spectral_radius, terminal_weight};

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dfl::{FLAT_DIM, POSITION_YAW_INDICES};
use crate::error::{Error, Result};

/// How obstacle avoidance enters the MPC problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyMode {
    /// `H(z_{k+1}) ≥ (1 − γ)·H(z_k)`.
    Cbf,
    /// `H(z_k) ≥ 0` at every predicted step.
    Ed,
}

impl std::str::FromStr for SafetyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cbf" => Ok(SafetyMode::Cbf),
            "ed" => Ok(SafetyMode::Ed),
            other => Err(Error::Config(format!(
                "unknown safety mode '{other}' (expected cbf or ed)"
            ))),
        }
    }
}

impl std::fmt::Display for SafetyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SafetyMode::Cbf => "cbf",
            SafetyMode::Ed => "ed",
        })
    }
}

/// Spherical keep-out region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl Obstacle {
    pub fn new(center: Vector3<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || !center.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("obstacle radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    /// Same obstacle expressed relative to `goal`.
    pub fn shifted(&self, goal: &Goal) -> Self {
        Self {
            center: self.center - goal.p,
            radius: self.radius,
        }
    }
}

/// Regulation target: position and heading.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Goal {
    pub p: Vector3<f64>,
    pub yaw: f64,
}

impl Goal {
    fn as_array(&self) -> [f64; 4] {
        [self.p[0], self.p[1], self.p[2], self.yaw]
    }
}

/// User-facing MPC parameters, as they appear in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcParams {
    pub n: usize,
    pub nc: usize,
    pub gamma: f64,
    pub delta: f64,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub z_lo: [f64; 4],
    pub z_hi: [f64; 4],
    pub v_lo: [f64; 4],
    pub v_hi: [f64; 4],
    pub mode: SafetyMode,
}

impl Default for MpcParams {
    fn default() -> Self {
        let mut q_diag = vec![1.0; FLAT_DIM];
        for i in POSITION_YAW_INDICES {
            q_diag[i] = 10.0;
        }
        Self {
            n: 20,
            nc: 20,
            gamma: 0.1,
            delta: 0.05,
            q_diag,
            r_diag: vec![1.0; INPUT_DIM],
            z_lo: [-10.0, -10.0, -10.0, -PI],
            z_hi: [10.0, 10.0, 10.0, PI],
            v_lo: [-100.0; 4],
            v_hi: [100.0; 4],
            mode: SafetyMode::Cbf,
        }
    }
}

/// Fully resolved MPC configuration, including the terminal gain and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub nc: usize,
    pub gamma: f64,
    pub model: LinearModel,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qbar: DMatrix<f64>,
    /// Terminal gain, `v = K·z`.
    pub k: DMatrix<f64>,
    /// Bounds on `(z1, z5, z9, z13)`.
    pub z_lo: [f64; 4],
    pub z_hi: [f64; 4],
    pub v_lo: [f64; 4],
    pub v_hi: [f64; 4],
    pub mode: SafetyMode,
}

impl MpcConfig {
    /// Discretizes the flat model, computes the LQR terminal gain and the
    /// matching Lyapunov terminal weight, and checks every invariant.
    pub fn from_params(params: &MpcParams) -> Result<Self> {
        if params.q_diag.len() != FLAT_DIM || params.r_diag.len() != INPUT_DIM {
            return Err(Error::Config(format!(
                "q_diag needs {FLAT_DIM} entries and r_diag {INPUT_DIM}, got {} and {}",
                params.q_diag.len(),
                params.r_diag.len()
            )));
        }
        if !(params.delta > 0.0 && params.delta.is_finite()) {
            return Err(Error::Config(format!(
                "sampling period must be positive, got {}",
                params.delta
            )));
        }
        if params.q_diag.iter().any(|v| !(*v >= 0.0)) || params.r_diag.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("Q must be PSD and R positive definite".into()));
        }
        let model = discretize(&build_continuous(), params.delta);
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&params.q_diag));
        let r = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&params.r_diag));
        let k = lqr_gain(&model.a_d, &model.b_d, &q, &r)?;
        let qbar = terminal_weight(&model.a_d, &model.b_d, &k, &q, &r)?;
        let cfg = Self {
            horizon: params.n,
            nc: params.nc,
            gamma: params.gamma,
            model,
            q,
            r,
            qbar,
            k,
            z_lo: params.z_lo,
            z_hi: params.z_hi,
            v_lo: params.v_lo,
            v_hi: params.v_hi,
            mode: params.mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.model.a_d + &self.model.b_d * &self.k
    }

    pub fn lyapunov_residual(&self) -> f64 {
        let w = &self.q + self.k.tr_mul(&(&self.r * &self.k));
        terminal::lyapunov_residual(&self.closed_loop(), &self.qbar, &w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("prediction horizon must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        for i in 0..4 {
            if !(self.z_lo[i] <= self.z_hi[i]) || !(self.v_lo[i] <= self.v_hi[i]) {
                return Err(Error::Config(format!("bound pair {i} is inverted")));
            }
        }
        let n = FLAT_DIM;
        let shapes_ok = self.q.shape() == (n, n)
            && self.qbar.shape() == (n, n)
            && self.r.shape() == (INPUT_DIM, INPUT_DIM)
            && self.k.shape() == (INPUT_DIM, n);
        if !shapes_ok {
            return Err(Error::Config("weight or gain matrices have the wrong shape".into()));
        }
        let rho = spectral_radius(&self.closed_loop());
        if !(rho < 1.0) {
            return Err(Error::Config(format!(
                "terminal gain is not stabilizing (spectral radius {rho})"
            )));
        }
        let resid = self.lyapunov_residual();
        if !(resid <= 1e-8) {
            return Err(Error::Config(format!("terminal weight residual {resid} exceeds 1e-8")));
        }
        Ok(())
    }

    /// Copy with the state box expressed relative to `goal`.
    pub fn relative_to(&self, goal: &Goal) -> Self {
        let g = goal.as_array();
        let mut cfg = self.clone();
        for (i, gi) in g.iter().enumerate() {
            cfg.z_lo[i] -= gi;
            cfg.z_hi[i] -= gi;
        }
        cfg
    }
}
