//! Quick numerical self-checks run by `vtolsafe verify`.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dfl::{decoupling_inverse, decoupling_matrix, dfl_control, flat_map, VirtualInput};
use crate::linear_mpc::{self, MpcConfig, MpcParams};
use crate::qcqp::{self, QcqpProblem, QuadraticRow, SolveStatus, SolverSettings};
use crate::vehicle::{derivatives, rk4_with, BodyParams, ExtendedState, RigidState};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<28} {}", self.name, self.detail)
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn random_state(rng: &mut ChaCha8Rng, params: &BodyParams) -> ExtendedState {
    let mut r = || rng.random_range(-1.0..1.0);
    ExtendedState {
        rigid: RigidState {
            p: Vector3::new(r(), r(), r()),
            eulers: Vector3::new(0.6 * r(), 0.6 * r(), 3.0 * r()),
            v: Vector3::new(r(), r(), r()),
            euler_rates: Vector3::new(r(), r(), r()),
        },
        thrust: params.hover_thrust() * (1.0 + 0.5 * r()),
        thrust_rate: r(),
    }
}

fn decoupling() -> Check {
    let params = BodyParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x = random_state(&mut rng, &params);
        match (decoupling_matrix(&x, &params), decoupling_inverse(&x, &params)) {
            (Ok(a), Ok(ai)) => worst = worst.max((a * ai - nalgebra::Matrix4::identity()).amax()),
            _ => worst = f64::INFINITY,
        }
    }
    check(
        "decoupling inverse",
        worst <= 1e-9,
        format!("max |A·A⁻¹ − I| = {worst:.2e}"),
    )
}

fn linearization() -> Check {
    // Snap of the flat state under constant v must equal v.
    let params = BodyParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let dt = 1e-3;
    for _ in 0..5 {
        let mut x = random_state(&mut rng, &params);
        let v = VirtualInput {
            v1: rng.random_range(-1.0..1.0),
            v2: rng.random_range(-1.0..1.0),
            v3: rng.random_range(-1.0..1.0),
            v4: rng.random_range(-1.0..1.0),
        };
        let z0 = flat_map(&x, &params).expect("regular state");
        let steps = 200;
        let stepped = (0..steps).try_fold(x, |s, _| {
            rk4_with(&s, dt, |y, _| derivatives(y, &dfl_control(y, &v, &params)?, &params))
        });
        x = match stepped {
            Ok(x) => x,
            Err(_) => return check("flat chain exactness", false, "integration failed".into()),
        };
        let t = steps as f64 * dt;
        let z1 = flat_map(&x, &params).expect("regular state");
        let vv = v.as_vector();
        for axis in 0..3 {
            let b = 4 * axis;
            let pred = z0.0[b]
                + z0.0[b + 1] * t
                + z0.0[b + 2] * t * t / 2.0
                + z0.0[b + 3] * t.powi(3) / 6.0
                + vv[axis] * t.powi(4) / 24.0;
            worst = worst.max((pred - z1.0[b]).abs());
        }
        let yaw = z0.0[12] + z0.0[13] * t + vv[3] * t * t / 2.0;
        worst = worst.max((yaw - z1.0[12]).abs());
    }
    check(
        "flat chain exactness",
        worst <= 1e-6,
        format!("max position error = {worst:.2e}"),
    )
}

fn riccati() -> Check {
    let one = DMatrix::from_element(1, 1, 1.0);
    let p = linear_mpc::solve_dare(&one, &one, &one, &one)
        .map(|p| p[(0, 0)])
        .unwrap_or(f64::NAN);
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    let cfg = MpcConfig::from_params(&MpcParams::default());
    let (rho, resid) = match &cfg {
        Ok(c) => (linear_mpc::spectral_radius(&c.closed_loop()), c.lyapunov_residual()),
        Err(_) => (f64::NAN, f64::NAN),
    };
    let ok = (p - golden).abs() <= 1e-10 && rho < 1.0 && resid <= 1e-8;
    check(
        "riccati and lyapunov",
        ok,
        format!(
            "scalar P error {:.1e}, ρ = {rho:.6}, residual {resid:.1e}",
            (p - golden).abs()
        ),
    )
}

fn circle_projection() -> Check {
    let mut p = QcqpProblem::unconstrained(DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![-4.0, 0.0]), 4.0);
    p.quadratic.push(QuadraticRow {
        hessian: DMatrix::identity(2, 2) * -2.0,
        gradient: DVector::zeros(2),
        constant: 1.0,
    });
    let r = qcqp::solve(&p, Some(&DVector::from_vec(vec![0.5, 0.5])), &SolverSettings::default());
    let err = (r.solution - DVector::from_vec(vec![1.0, 0.0])).amax();
    check(
        "qcqp circle projection",
        r.status == SolveStatus::Optimal && err <= 1e-6,
        format!("status {}, error {err:.1e}", r.status),
    )
}

/// Runs every self-check.
pub fn run_all() -> Vec<Check> {
    vec![decoupling(), linearization(), riccati(), circle_projection()]
}
