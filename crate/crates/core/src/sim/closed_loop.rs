use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::log::{obstacle_readings, StepRecord, TrajectoryLog};
use super::scenario::{InputHold, Scenario};
use crate::dfl::{dfl_control, flat_map, FlatState, VirtualInput};
use crate::error::{Error, Result};
use crate::linear_mpc::{build_qcqp, goal_shift, shift_plan, MpcConfig, Obstacle, INPUT_DIM};
use crate::qcqp::{self, SolveStatus, SolverSettings};
use crate::vehicle::{derivatives, rk4_step, rk4_with, ExtendedState, RigidState};

/// MaxIter results with a violation at or below this are still applied.
pub const ACCEPT_VIOLATION: f64 = 1e-6;

/// Adds zero-mean Gaussian noise of the given variance to the twelve rigid
/// components. Thrust and thrust rate are left untouched.
pub fn add_noise(x: &ExtendedState, variance: f64, rng: &mut ChaCha8Rng) -> ExtendedState {
    if variance == 0.0 {
        return *x;
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite nonnegative variance");
    let mut draw = || normal.sample(rng);
    let r = &x.rigid;
    let mut out = *x;
    out.rigid = RigidState {
        p: r.p.map(|c| c + draw()),
        eulers: r.eulers.map(|c| c + draw()),
        v: r.v.map(|c| c + draw()),
        euler_rates: r.euler_rates.map(|c| c + draw()),
    };
    out
}

fn stage_cost(cfg: &MpcConfig, z: &FlatState, v: &[f64]) -> f64 {
    let z = DVector::from_column_slice(z.0.as_slice());
    let v = DVector::from_column_slice(v);
    z.dot(&(&cfg.q * &z)) + v.dot(&(&cfg.r * &v))
}

/// Result of one receding-horizon decision.
struct Decision {
    plan: DVector<f64>,
    prediction: crate::linear_mpc::Prediction,
    cost: f64,
    status: SolveStatus,
    fallback: bool,
    iterations: usize,
    solve_ms: f64,
}

fn decide(
    z: &FlatState,
    cfg: &MpcConfig,
    obstacles: &[Obstacle],
    solver: &SolverSettings,
    previous: Option<(&DVector<f64>, &crate::linear_mpc::Prediction)>,
) -> Result<Decision> {
    let problem = build_qcqp(z, cfg, obstacles)?;
    let warm = previous.map(|(plan, pred)| shift_plan(plan, pred, cfg));
    let result = qcqp::solve(&problem.qcqp, warm.as_ref(), solver);
    let usable = match result.status {
        SolveStatus::Optimal => true,
        SolveStatus::MaxIter => result.constraint_violation <= ACCEPT_VIOLATION,
        SolveStatus::Infeasible => false,
    };
    let (plan, cost, fallback) = if usable {
        (result.solution, result.objective, false)
    } else if let Some(shifted) = warm {
        let cost = problem.qcqp.objective(&shifted);
        (shifted, cost, true)
    } else {
        return Err(Error::NonConvergence {
            what: format!("first MPC solve ended with status {}", result.status),
            iterations: result.iterations,
        });
    };
    Ok(Decision {
        plan,
        prediction: problem.prediction,
        cost,
        status: result.status,
        fallback,
        iterations: result.iterations,
        solve_ms: result.wall_time * 1e3,
    })
}

/// Runs the measure → flat map → MPC → DFL → plant loop for the scenario
/// duration. Singularities, attitude excursions and an unusable first solve
/// end the run early; the partial log is returned with `aborted` set.
pub fn run_closed_loop(scenario: &Scenario) -> TrajectoryLog {
    let cfg = scenario.cfg.relative_to(&scenario.goal);
    let rel_obstacles: Vec<Obstacle> = scenario.obstacles.iter().map(|o| o.shifted(&scenario.goal)).collect();
    let params = &scenario.params;
    let delta = cfg.model.delta;
    let sub_dt = delta / scenario.sim.substeps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.sim.seed);

    let mut log = TrajectoryLog {
        delta,
        gamma: cfg.gamma,
        goal: scenario.goal,
        obstacles: scenario.obstacles.clone(),
        settle_threshold: scenario.sim.settle_threshold,
        records: Vec::with_capacity(scenario.steps()),
        aborted: None,
    };
    let mut state = scenario.initial;
    let mut previous: Option<(DVector<f64>, crate::linear_mpc::Prediction)> = None;

    for k in 0..scenario.steps() {
        let mut step = || -> Result<(StepRecord, DVector<f64>, crate::linear_mpc::Prediction)> {
            let measured = add_noise(&state, scenario.sim.noise_variance, &mut rng);
            let z_true = flat_map(&state, params)?;
            let z_meas = goal_shift(&flat_map(&measured, params)?, &scenario.goal);
            let d = decide(
                &z_meas,
                &cfg,
                &rel_obstacles,
                &scenario.solver,
                previous.as_ref().map(|(p, pr)| (p, pr)),
            )?;
            let v_slice = &d.plan.as_slice()[..INPUT_DIM];
            let v = VirtualInput::from_slice(v_slice);
            let u = dfl_control(&measured, &v, params)?;
            let (h, distance) = obstacle_readings(&z_true, &scenario.obstacles);
            let record = StepRecord {
                time: k as f64 * delta,
                state,
                measured,
                flat: z_true,
                v,
                u,
                h,
                distance,
                cost: d.cost,
                stage_cost: stage_cost(&cfg, &z_meas, v_slice),
                status: d.status,
                fallback: d.fallback,
                iterations: d.iterations,
                solve_ms: d.solve_ms,
            };
            Ok((record, d.plan, d.prediction))
        };
        let (record, plan, prediction) = match step() {
            Ok(out) => out,
            Err(e) => {
                log.aborted = Some(format!("step {k}: {e}"));
                return log;
            }
        };
        let v = record.v;
        let u = record.u;
        log.records.push(record);
        previous = Some((plan, prediction));

        let mut next = state;
        for _ in 0..scenario.sim.substeps {
            let advanced = match scenario.sim.hold {
                InputHold::Input => rk4_step(&next, &u, sub_dt, params),
                InputHold::Virtual => rk4_with(&next, sub_dt, |s, _| {
                    let u = dfl_control(s, &v, params)?;
                    derivatives(s, &u, params)
                }),
            };
            match advanced {
                Ok(x) if x.is_finite() => next = x,
                Ok(_) => {
                    log.aborted = Some(format!("step {k}: plant state is not finite"));
                    return log;
                }
                Err(e) => {
                    log.aborted = Some(format!("step {k}: {e}"));
                    return log;
                }
            }
        }
        state = next;
    }
    log
}

/// One step of [`run_nominal`].
#[derive(Debug, Clone, PartialEq)]
pub struct NominalStep {
    pub z: FlatState,
    pub v: [f64; INPUT_DIM],
    pub cost: f64,
    pub stage_cost: f64,
    pub status: SolveStatus,
}

/// Receding-horizon loop on the discrete flat model itself, `z⁺ = A_d z + B_d v`,
/// starting from the goal-relative state `z0`.
pub fn run_nominal(
    z0: &FlatState,
    cfg: &MpcConfig,
    obstacles: &[Obstacle],
    solver: &SolverSettings,
    steps: usize,
) -> Result<Vec<NominalStep>> {
    let mut z = *z0;
    let mut previous: Option<(DVector<f64>, crate::linear_mpc::Prediction)> = None;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let d = decide(&z, cfg, obstacles, solver, previous.as_ref().map(|(p, pr)| (p, pr)))?;
        let v: [f64; INPUT_DIM] = d.plan.as_slice()[..INPUT_DIM].try_into().expect("four inputs");
        out.push(NominalStep {
            z,
            v,
            cost: d.cost,
            stage_cost: stage_cost(cfg, &z, &v),
            status: d.status,
        });
        let zv = DVector::from_column_slice(z.0.as_slice());
        let next = &cfg.model.a_d * zv + &cfg.model.b_d * DVector::from_column_slice(&v);
        z = FlatState(nalgebra::SVector::from_column_slice(next.as_slice()));
        previous = Some((d.plan, d.prediction));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn zero_variance_is_identity() {
        let params = crate::vehicle::BodyParams::default();
        let x = ExtendedState::hover(Vector3::new(1.0, 2.0, 3.0), 0.3, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_noise(&x, 0.0, &mut rng), x);
    }

    #[test]
    fn noise_is_seeded_and_spares_thrust() {
        let params = crate::vehicle::BodyParams::default();
        let x = ExtendedState::hover(Vector3::zeros(), 0.0, &params);
        let a = add_noise(&x, 0.05, &mut ChaCha8Rng::seed_from_u64(5));
        let b = add_noise(&x, 0.05, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert_ne!(a, x);
        assert_eq!(a.thrust, x.thrust);
        assert_eq!(a.thrust_rate, x.thrust_rate);
    }

    #[test]
    fn noise_sample_variance() {
        let x = ExtendedState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let samples: Vec<f64> = (0..n).map(|_| add_noise(&x, 0.05, &mut rng).rigid.v[1]).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.05).abs() <= 0.05 * 0.05, "variance {var}");
    }
}
