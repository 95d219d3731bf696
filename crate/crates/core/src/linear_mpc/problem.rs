use nalgebra::{DMatrix, DVector, SVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Goal, MpcConfig, Obstacle, SafetyMode, INPUT_DIM};
use crate::dfl::{FlatState, FLAT_DIM, POSITION_YAW_INDICES};
use crate::error::Result;
use crate::qcqp::{QcqpProblem, QuadraticRow};

const POSITION_INDICES: [usize; 3] = [0, 4, 8];

/// Safety function `‖p − c‖² − r²`; nonnegative outside the sphere.
pub fn cbf_value(z: &FlatState, obstacle: &Obstacle) -> f64 {
    (z.position() - obstacle.center).norm_squared() - obstacle.radius * obstacle.radius
}

pub fn goal_shift(z: &FlatState, goal: &Goal) -> FlatState {
    let mut out = *z;
    let g = goal.as_array();
    for (i, &idx) in POSITION_YAW_INDICES.iter().enumerate() {
        out.0[idx] -= g[i];
    }
    out
}

pub fn goal_unshift(z: &FlatState, goal: &Goal) -> FlatState {
    let mut out = *z;
    let g = goal.as_array();
    for (i, &idx) in POSITION_YAW_INDICES.iter().enumerate() {
        out.0[idx] += g[i];
    }
    out
}

/// `H(z_{k+1}) − (1 − γ)·H(z_k)` for consecutive states, one row per obstacle.
pub fn safety_residuals(states: &[FlatState], obstacles: &[Obstacle], gamma: f64) -> Vec<Vec<f64>> {
    obstacles
        .iter()
        .map(|obs| {
            states
                .windows(2)
                .map(|w| cbf_value(&w[1], obs) - (1.0 - gamma) * cbf_value(&w[0], obs))
                .collect()
        })
        .collect()
}

/// Condensed prediction `z_k = offset_k + map_k·U` for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub horizon: usize,
    pub offset: DVector<f64>,
    pub map: DMatrix<f64>,
}

impl Prediction {
    fn block_offset(&self, k: usize) -> DVector<f64> {
        self.offset.rows(k * FLAT_DIM, FLAT_DIM).into_owned()
    }

    fn block_map(&self, k: usize) -> DMatrix<f64> {
        self.map.rows(k * FLAT_DIM, FLAT_DIM).into_owned()
    }

    pub fn state(&self, k: usize, u: &DVector<f64>) -> FlatState {
        let v = self.block_offset(k) + self.block_map(k) * u;
        FlatState(SVector::from_column_slice(v.as_slice()))
    }

    pub fn states(&self, u: &DVector<f64>) -> Vec<FlatState> {
        let all = &self.offset + &self.map * u;
        (0..=self.horizon)
            .map(|k| FlatState(SVector::from_column_slice(all.rows(k * FLAT_DIM, FLAT_DIM).as_slice())))
            .collect()
    }
}

/// Number of rows of each family, in the order they appear in the QCQP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RowLayout {
    pub state_box: usize,
    pub input_box: usize,
    pub terminal_input: usize,
    pub terminal_state: usize,
    /// Safety rows over the horizon, `N` per obstacle.
    pub safety: usize,
    /// Safety rows that do not depend on the inputs and are left out of the
    /// QCQP. The remaining `safety − predetermined` rows follow the linear rows.
    pub predetermined: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub qcqp: QcqpProblem,
    pub prediction: Prediction,
    pub layout: RowLayout,
    /// Every safety row, obstacle-major then step, including the predetermined ones.
    pub safety_rows: Vec<QuadraticRow>,
}

impl MpcProblem {
    /// Values of the predetermined safety rows (fixed by the current state).
    pub fn predetermined_values(&self) -> Vec<f64> {
        self.safety_rows
            .iter()
            .filter(|r| is_constant(r))
            .map(|r| r.constant)
            .collect()
    }
}

fn is_constant(row: &QuadraticRow) -> bool {
    row.gradient.iter().all(|v| *v == 0.0) && row.hessian.iter().all(|v| *v == 0.0)
}

fn push_box_rows(rows: &mut Vec<(DVector<f64>, f64)>, coeff: DVector<f64>, offset: f64, lo: f64, hi: f64) -> usize {
    // coeff·U + offset ∈ [lo, hi]
    let mut count = 0;
    if lo.is_finite() {
        rows.push((coeff.clone(), lo - offset));
        count += 1;
    }
    if hi.is_finite() {
        rows.push((-coeff, offset - hi));
        count += 1;
    }
    count
}

/// `½UᵀMU + qᵀU + r` form of `H(z_k)` given the affine position map.
fn barrier_form(pos_map: &DMatrix<f64>, pos_offset: &DVector<f64>, obs: &Obstacle) -> QuadraticRow {
    let e = pos_offset - DVector::from_column_slice(obs.center.as_slice());
    QuadraticRow {
        hessian: pos_map.tr_mul(pos_map) * 2.0,
        gradient: pos_map.tr_mul(&e) * 2.0,
        constant: e.norm_squared() - obs.radius * obs.radius,
    }
}

/// Assembles the condensed MPC problem from the current (goal-relative) flat
/// state. Obstacles and `cfg` bounds must be in the same coordinates as `z0`.
pub fn build_qcqp(z0: &FlatState, cfg: &MpcConfig, obstacles: &[Obstacle]) -> Result<MpcProblem> {
    cfg.validate()?;
    let n_steps = cfg.horizon;
    let nu = INPUT_DIM * n_steps;
    let a = &cfg.model.a_d;
    let b = &cfg.model.b_d;

    // Prediction matrices.
    let mut offset = DVector::zeros(FLAT_DIM * (n_steps + 1));
    let mut map = DMatrix::zeros(FLAT_DIM * (n_steps + 1), nu);
    let mut s = DVector::from_column_slice(z0.0.as_slice());
    let mut g = DMatrix::zeros(FLAT_DIM, nu);
    offset.rows_mut(0, FLAT_DIM).copy_from(&s);
    for k in 0..n_steps {
        s = a * &s;
        g = a * &g;
        g.view_mut((0, INPUT_DIM * k), (FLAT_DIM, INPUT_DIM)).copy_from(b);
        offset.rows_mut((k + 1) * FLAT_DIM, FLAT_DIM).copy_from(&s);
        map.view_mut(((k + 1) * FLAT_DIM, 0), (FLAT_DIM, nu)).copy_from(&g);
    }
    let prediction = Prediction {
        horizon: n_steps,
        offset,
        map,
    };

    // Cost Σ zᵀQz + vᵀRv + z_NᵀQ̄z_N.
    let mut hessian = DMatrix::zeros(nu, nu);
    let mut gradient = DVector::zeros(nu);
    let mut constant = 0.0;
    for k in 0..=n_steps {
        let w = if k == n_steps { &cfg.qbar } else { &cfg.q };
        let gk = prediction.block_map(k);
        let sk = prediction.block_offset(k);
        let wg = w * &gk;
        hessian += gk.tr_mul(&wg) * 2.0;
        gradient += wg.tr_mul(&sk) * 2.0;
        constant += sk.dot(&(w * &sk));
    }
    for k in 0..n_steps {
        let mut block = hessian.view_mut((INPUT_DIM * k, INPUT_DIM * k), (INPUT_DIM, INPUT_DIM));
        block += &cfg.r * 2.0;
    }
    let hessian = (&hessian + hessian.transpose()) * 0.5;

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut layout = RowLayout::default();

    for k in 1..n_steps {
        let gk = prediction.block_map(k);
        let sk = prediction.block_offset(k);
        for (i, &idx) in POSITION_YAW_INDICES.iter().enumerate() {
            layout.state_box += push_box_rows(&mut rows, gk.row(idx).transpose(), sk[idx], cfg.z_lo[i], cfg.z_hi[i]);
        }
    }

    for k in 0..n_steps {
        for i in 0..INPUT_DIM {
            let mut coeff = DVector::zeros(nu);
            coeff[INPUT_DIM * k + i] = 1.0;
            layout.input_box += push_box_rows(&mut rows, coeff, 0.0, cfg.v_lo[i], cfg.v_hi[i]);
        }
    }

    let phi = cfg.closed_loop();
    let mut terminal_map = prediction.block_map(n_steps);
    let mut terminal_offset = prediction.block_offset(n_steps);
    let mut input_rows = Vec::new();
    let mut state_rows = Vec::new();
    for _ in 0..=cfg.nc {
        let kmap = &cfg.k * &terminal_map;
        let koff = &cfg.k * &terminal_offset;
        for i in 0..INPUT_DIM {
            layout.terminal_input += push_box_rows(
                &mut input_rows,
                kmap.row(i).transpose(),
                koff[i],
                cfg.v_lo[i],
                cfg.v_hi[i],
            );
        }
        for (i, &idx) in POSITION_YAW_INDICES.iter().enumerate() {
            layout.terminal_state += push_box_rows(
                &mut state_rows,
                terminal_map.row(idx).transpose(),
                terminal_offset[idx],
                cfg.z_lo[i],
                cfg.z_hi[i],
            );
        }
        terminal_map = &phi * &terminal_map;
        terminal_offset = &phi * &terminal_offset;
    }
    rows.extend(input_rows);
    rows.extend(state_rows);

    let mut linear_a = DMatrix::zeros(rows.len(), nu);
    let mut linear_b = DVector::zeros(rows.len());
    for (i, (coeff, rhs)) in rows.iter().enumerate() {
        linear_a.row_mut(i).copy_from(&coeff.transpose());
        linear_b[i] = *rhs;
    }

    let position_form = |k: usize| {
        let gk = prediction.block_map(k).select_rows(&POSITION_INDICES);
        let sk = prediction.block_offset(k).select_rows(&POSITION_INDICES);
        (gk, sk)
    };
    let mut safety_rows = Vec::new();
    for obs in obstacles {
        match cfg.mode {
            SafetyMode::Cbf => {
                for k in 0..n_steps {
                    let (g0, s0) = position_form(k);
                    let (g1, s1) = position_form(k + 1);
                    let now = barrier_form(&g0, &s0, obs);
                    let next = barrier_form(&g1, &s1, obs);
                    let keep = 1.0 - cfg.gamma;
                    safety_rows.push(QuadraticRow {
                        hessian: next.hessian - now.hessian * keep,
                        gradient: next.gradient - now.gradient * keep,
                        constant: next.constant - now.constant * keep,
                    });
                }
            }
            SafetyMode::Ed => {
                for k in 1..=n_steps {
                    let (gk, sk) = position_form(k);
                    safety_rows.push(barrier_form(&gk, &sk, obs));
                }
            }
        }
    }
    layout.safety = safety_rows.len();
    let quadratic: Vec<QuadraticRow> = safety_rows.iter().filter(|r| !is_constant(r)).cloned().collect();
    layout.predetermined = layout.safety - quadratic.len();

    let qcqp = QcqpProblem {
        hessian,
        gradient,
        constant,
        linear_a,
        linear_b,
        quadratic,
    };
    qcqp.validate()?;
    Ok(MpcProblem {
        qcqp,
        prediction,
        layout,
        safety_rows,
    })
}

/// Receding-horizon warm start: drop the first input and append `K·z_N`.
pub fn shift_plan(plan: &DVector<f64>, prediction: &Prediction, cfg: &MpcConfig) -> DVector<f64> {
    let nu = plan.len();
    let mut next = DVector::zeros(nu);
    if nu > INPUT_DIM {
        next.rows_mut(0, nu - INPUT_DIM)
            .copy_from(&plan.rows(INPUT_DIM, nu - INPUT_DIM));
    }
    let terminal = prediction.state(prediction.horizon, plan);
    let tail = &cfg.k * DVector::from_column_slice(terminal.0.as_slice());
    next.rows_mut(nu - INPUT_DIM, INPUT_DIM).copy_from(&tail);
    next
}

/// Outcome of sampling the terminal set for the CBF safe-invariance condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalInvarianceReport {
    pub samples: usize,
    /// Samples that start in the safe set of every obstacle.
    pub safe_samples: usize,
    /// Safe samples where `H(Φz) ≤ (1 − γ)·H(z)` for some obstacle.
    pub violations: usize,
    /// Smallest `H(Φz) − (1 − γ)·H(z)` seen over safe samples.
    pub worst_margin: f64,
}

/// Samples points on the boundary of the terminal set
/// `{z : all terminal rows hold for i = 0..=N_c}` along random directions
/// and checks `H((A_d + B_d·K)·z) > (1 − γ)·H(z)`.
pub fn terminal_invariance_check(
    cfg: &MpcConfig,
    obstacles: &[Obstacle],
    samples: usize,
    seed: u64,
) -> TerminalInvarianceReport {
    let phi = cfg.closed_loop();
    // Rows c·z ≤ h describing the terminal set (symmetric around the origin is not assumed).
    let mut rows: Vec<(DVector<f64>, f64, f64)> = Vec::new();
    let mut power = DMatrix::<f64>::identity(FLAT_DIM, FLAT_DIM);
    for _ in 0..=cfg.nc {
        let kp = &cfg.k * &power;
        for i in 0..INPUT_DIM {
            rows.push((kp.row(i).transpose(), cfg.v_lo[i], cfg.v_hi[i]));
        }
        for (i, &idx) in POSITION_YAW_INDICES.iter().enumerate() {
            rows.push((power.row(idx).transpose(), cfg.z_lo[i], cfg.z_hi[i]));
        }
        power = &phi * &power;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TerminalInvarianceReport {
        samples,
        safe_samples: 0,
        violations: 0,
        worst_margin: f64::INFINITY,
    };
    for _ in 0..samples {
        let dir = DVector::<f64>::from_fn(FLAT_DIM, |_, _| StandardNormal.sample(&mut rng));
        let mut scale = f64::INFINITY;
        for (c, lo, hi) in &rows {
            let rate = c.dot(&dir);
            if rate > 0.0 && hi.is_finite() {
                scale = scale.min(hi / rate);
            } else if rate < 0.0 && lo.is_finite() {
                scale = scale.min(lo / rate);
            }
        }
        if !scale.is_finite() || scale <= 0.0 {
            continue;
        }
        let z = &dir * scale;
        let zf = FlatState(SVector::from_column_slice(z.as_slice()));
        let next = FlatState(SVector::from_column_slice((&phi * &z).as_slice()));
        if obstacles.iter().any(|o| cbf_value(&zf, o) < 0.0) {
            continue;
        }
        report.safe_samples += 1;
        let margin = obstacles
            .iter()
            .map(|o| cbf_value(&next, o) - (1.0 - cfg.gamma) * cbf_value(&zf, o))
            .fold(f64::INFINITY, f64::min);
        report.worst_margin = report.worst_margin.min(margin);
        if margin <= 0.0 {
            report.violations += 1;
        }
    }
    report
}
