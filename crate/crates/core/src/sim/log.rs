use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::dfl::{FlatState, VirtualInput};
use crate::error::Result;
use crate::linear_mpc::{cbf_value, Goal, Obstacle};
use crate::qcqp::SolveStatus;
use crate::vehicle::{ExtendedInput, ExtendedState};

pub const CSV_COLUMNS: [&str; 25] = [
    "t",
    "x",
    "y",
    "z",
    "phi",
    "theta",
    "psi",
    "vx",
    "vy",
    "vz",
    "thrust",
    "u1",
    "u2",
    "u3",
    "u4",
    "v1",
    "v2",
    "v3",
    "v4",
    "h_min",
    "dist_min",
    "cost",
    "solver_status",
    "solver_iters",
    "solve_ms",
];

/// One control period.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub time: f64,
    /// True plant state at the sampling instant.
    pub state: ExtendedState,
    /// State seen by the controller.
    pub measured: ExtendedState,
    /// Flat coordinates of the true state (absolute frame).
    pub flat: FlatState,
    pub v: VirtualInput,
    pub u: ExtendedInput,
    /// Safety function per obstacle on the true state.
    pub h: Vec<f64>,
    /// Distance from the obstacle centers (m).
    pub distance: Vec<f64>,
    /// Optimal value of the MPC problem solved at this step.
    pub cost: f64,
    /// `‖z‖²_Q + ‖v‖²_R` on the goal-relative measured flat state.
    pub stage_cost: f64,
    pub status: SolveStatus,
    /// The shifted previous plan was applied instead of the solver output.
    pub fallback: bool,
    pub iterations: usize,
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub delta: f64,
    pub gamma: f64,
    pub goal: Goal,
    pub obstacles: Vec<Obstacle>,
    pub settle_threshold: f64,
    pub records: Vec<StepRecord>,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
}

/// `%.9g`-style formatting.
pub fn format_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

impl TrajectoryLog {
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.records.iter().map(|r| r.state.rigid.p).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", CSV_COLUMNS.join(","))?;
        for r in &self.records {
            let s = &r.state.rigid;
            let h_min = r.h.iter().copied().fold(f64::NAN, f64::min);
            let dist_min = r.distance.iter().copied().fold(f64::NAN, f64::min);
            let nums = [
                r.time,
                s.p[0],
                s.p[1],
                s.p[2],
                s.eulers[0],
                s.eulers[1],
                s.eulers[2],
                s.v[0],
                s.v[1],
                s.v[2],
                r.state.thrust,
                r.u.u1,
                r.u.u2,
                r.u.u3,
                r.u.u4,
                r.v.v1,
                r.v.v2,
                r.v.v3,
                r.v.v4,
                h_min,
                dist_min,
                r.cost,
            ];
            let mut fields: Vec<String> = nums.iter().map(|v| format_sig(*v)).collect();
            fields.push(r.status.as_str().to_string());
            fields.push(r.iterations.to_string());
            fields.push(format_sig(r.solve_ms));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut writer = std::io::BufWriter::new(file);
        self.write_csv(&mut writer)?;
        writer.flush()?;
        Ok(())
    }

    /// `H(z_{k+1}) − (1 − γ)·H(z_k)` on the logged true flat states, per obstacle.
    pub fn barrier_residuals(&self) -> Vec<Vec<f64>> {
        let states: Vec<FlatState> = self.records.iter().map(|r| r.flat).collect();
        crate::linear_mpc::safety_residuals(&states, &self.obstacles, self.gamma)
    }

    /// First step at which the distance from the line through the start and
    /// the goal exceeds `threshold`.
    pub fn deviation_onset(&self, threshold: f64) -> Option<usize> {
        let start = self.records.first()?.state.rigid.p;
        let dir = self.goal.p - start;
        let len = dir.norm();
        self.records.iter().position(|r| {
            let rel = r.state.rigid.p - start;
            let off = if len > 0.0 {
                rel - dir * (rel.dot(&dir) / (len * len))
            } else {
                rel
            };
            off.norm() > threshold
        })
    }

    pub fn metrics(&self) -> Summary {
        let min_distance = (0..self.obstacles.len())
            .map(|i| self.records.iter().map(|r| r.distance[i]).fold(f64::INFINITY, f64::min))
            .collect();
        let min_h = self
            .records
            .iter()
            .flat_map(|r| r.h.iter().copied())
            .fold(f64::INFINITY, f64::min);
        let errors: Vec<f64> = self
            .records
            .iter()
            .map(|r| (r.state.rigid.p - self.goal.p).norm())
            .collect();
        let settling_time = match errors.iter().rposition(|e| *e >= self.settle_threshold) {
            None if !errors.is_empty() => Some(self.records[0].time),
            None => None,
            Some(last) if last + 1 < errors.len() => Some(self.records[last + 1].time),
            Some(_) => None,
        };
        let min_residual = self
            .barrier_residuals()
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let n = self.records.len().max(1) as f64;
        Summary {
            steps: self.records.len(),
            min_distance,
            min_h,
            settling_time,
            final_error: errors.last().copied().unwrap_or(f64::NAN),
            min_barrier_residual: min_residual,
            max_barrier_violation: (-min_residual).max(0.0),
            infeasible_solves: self
                .records
                .iter()
                .filter(|r| r.status == SolveStatus::Infeasible)
                .count(),
            fallbacks: self.records.iter().filter(|r| r.fallback).count(),
            mean_solve_ms: self.records.iter().map(|r| r.solve_ms).sum::<f64>() / n,
            aborted: self.aborted.is_some(),
        }
    }

    /// Largest position error over records with `time ≥ from`.
    pub fn max_error_after(&self, from: f64) -> f64 {
        self.records
            .iter()
            .filter(|r| r.time >= from - 1e-9)
            .map(|r| (r.state.rigid.p - self.goal.p).norm())
            .fold(0.0, f64::max)
    }

    /// `J*(k+1) − J*(k) + ℓ(z_k, v_k)` for consecutive steps.
    pub fn cost_decrease_residuals(&self) -> Vec<f64> {
        self.records
            .windows(2)
            .map(|w| w[1].cost - w[0].cost + w[0].stage_cost)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub steps: usize,
    /// Smallest center distance per obstacle (m).
    pub min_distance: Vec<f64>,
    pub min_h: f64,
    /// Time after which the position error stays below the threshold.
    pub settling_time: Option<f64>,
    pub final_error: f64,
    pub min_barrier_residual: f64,
    pub max_barrier_violation: f64,
    pub infeasible_solves: usize,
    pub fallbacks: usize,
    pub mean_solve_ms: f64,
    pub aborted: bool,
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "steps: {}", self.steps)?;
        for (i, d) in self.min_distance.iter().enumerate() {
            writeln!(f, "min_distance[{i}]: {}", format_sig(*d))?;
        }
        match self.settling_time {
            Some(t) => writeln!(f, "settling_time: {}", format_sig(t))?,
            None => writeln!(f, "settling_time: none")?,
        }
        writeln!(f, "final_error: {}", format_sig(self.final_error))?;
        writeln!(f, "max_barrier_violation: {}", format_sig(self.max_barrier_violation))?;
        writeln!(f, "infeasible_solves: {}", self.infeasible_solves)?;
        writeln!(f, "fallbacks: {}", self.fallbacks)?;
        write!(f, "mean_solve_ms: {}", format_sig(self.mean_solve_ms))
    }
}

/// Safety values and center distances of `z` against every obstacle.
pub(crate) fn obstacle_readings(z: &FlatState, obstacles: &[Obstacle]) -> (Vec<f64>, Vec<f64>) {
    let h = obstacles.iter().map(|o| cbf_value(z, o)).collect();
    let d = obstacles.iter().map(|o| (z.position() - o.center).norm()).collect();
    (h, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::BodyParams;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(0.05), "0.05");
        assert_eq!(format_sig(-2.5), "-2.5");
        assert_eq!(format_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig(123456789.0), "123456789");
        assert_eq!(format_sig(1234567891.0), "1.23456789e+09");
        assert_eq!(format_sig(1.5e-7), "1.5e-07");
        assert_eq!(format_sig(0.0001), "0.0001");
        assert_eq!(format_sig(9.999999999), "10");
        assert_eq!(format_sig(f64::NAN), "nan");
        for x in [std::f64::consts::PI, -1.0e-3 / 7.0, 6.02e23, 0.7 * 9.81] {
            let back: f64 = format_sig(x).parse().unwrap();
            assert!((back - x).abs() <= 5e-9 * x.abs());
        }
    }

    fn hover_log(p: Vector3<f64>, obstacles: Vec<Obstacle>, steps: usize) -> TrajectoryLog {
        let params = BodyParams::default();
        let state = ExtendedState::hover(p, 0.0, &params);
        let flat = crate::dfl::flat_map(&state, &params).unwrap();
        let (h, distance) = obstacle_readings(&flat, &obstacles);
        let records = (0..steps)
            .map(|k| StepRecord {
                time: k as f64 * 0.05,
                state,
                measured: state,
                flat,
                v: VirtualInput::default(),
                u: ExtendedInput::default(),
                h: h.clone(),
                distance: distance.clone(),
                cost: 0.0,
                stage_cost: 0.0,
                status: SolveStatus::Optimal,
                fallback: false,
                iterations: 1,
                solve_ms: 0.5,
            })
            .collect();
        TrajectoryLog {
            delta: 0.05,
            gamma: 0.1,
            goal: Goal::default(),
            obstacles,
            settle_threshold: 0.1,
            records,
            aborted: None,
        }
    }

    #[test]
    fn hover_at_goal_metrics() {
        let obs = Obstacle::new(Vector3::new(3.0, 0.0, 0.0), 1.0).unwrap();
        let log = hover_log(Vector3::zeros(), vec![obs], 20);
        let m = log.metrics();
        assert_eq!(m.settling_time, Some(0.0));
        assert_eq!(m.max_barrier_violation, 0.0);
        assert_eq!(m.min_distance, vec![3.0]);
        assert_eq!(m.infeasible_solves, 0);
        assert_eq!(m.mean_solve_ms, 0.5);
        assert_eq!(log.deviation_onset(0.05), None);
    }

    #[test]
    fn touching_boundary_gives_radius() {
        let obs = Obstacle::new(Vector3::new(1.0, 0.0, 0.0), 1.0).unwrap();
        let log = hover_log(Vector3::zeros(), vec![obs], 3);
        assert_eq!(log.metrics().min_distance, vec![1.0]);
        assert_eq!(log.metrics().min_h, 0.0);
    }

    #[test]
    fn settling_time_tracks_last_excursion() {
        let mut log = hover_log(Vector3::zeros(), vec![], 10);
        log.records[4].state.rigid.p = Vector3::new(0.2, 0.0, 0.0);
        assert!((log.metrics().settling_time.unwrap() - 0.25).abs() < 1e-12);
        log.records[9].state.rigid.p = Vector3::new(0.2, 0.0, 0.0);
        assert_eq!(log.metrics().settling_time, None);
    }

    #[test]
    fn csv_layout() {
        let obs = Obstacle::new(Vector3::new(3.0, 0.0, 0.0), 1.0).unwrap();
        let log = hover_log(Vector3::zeros(), vec![obs], 2);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 25);
        assert!(lines[0].starts_with("t,x,y,z,phi"));
        assert!(lines[0].ends_with("cost,solver_status,solver_iters,solve_ms"));
        let row: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(row.len(), 25);
        assert_eq!(row[0], "0.05");
        assert_eq!(row[10], "6.867");
        assert_eq!(row[19], "8");
        assert_eq!(row[20], "3");
        assert_eq!(row[22], "optimal");
    }
}
