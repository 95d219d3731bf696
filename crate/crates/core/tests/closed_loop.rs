use nalgebra::Vector3;

use vtolsafe::linear_mpc::{Goal, MpcParams};
use vtolsafe::qcqp::SolverSettings;
use vtolsafe::sim::{run_closed_loop, Scenario, SimSettings, TrajectoryLog, CSV_COLUMNS};
use vtolsafe::vehicle::{BodyParams, ExtendedState};
use vtolsafe::Error;

fn short(duration: f64) -> Scenario {
    let mut s = Scenario::reference();
    s.sim.duration = duration;
    s
}

#[test]
fn hover_at_goal_stays_put() {
    let params = BodyParams::default();
    let s = Scenario::new(
        params,
        ExtendedState::hover(Vector3::zeros(), 0.0, &params),
        Goal::default(),
        vec![],
        MpcParams::default(),
        SolverSettings::default(),
        SimSettings {
            duration: 2.0,
            ..SimSettings::default()
        },
    )
    .unwrap();
    let log = run_closed_loop(&s);
    assert!(log.aborted.is_none());
    assert_eq!(log.records.len(), s.steps());
    for r in &log.records {
        assert!(r.state.rigid.p.norm() <= 1e-3, "drifted to {}", r.state.rigid.p);
    }
}

/// Everything except wall-clock solve time.
fn fingerprint(log: &TrajectoryLog) -> Vec<String> {
    log.records
        .iter()
        .map(|r| {
            format!(
                "{:?} {:?} {:?} {:?} {:?} {:?} {} {}",
                r.state, r.measured, r.v, r.u, r.cost, r.status, r.fallback, r.iterations
            )
        })
        .collect()
}

#[test]
fn runs_are_deterministic() {
    let mut s = short(2.0);
    s.sim.noise_variance = 0.01;
    s.sim.seed = 7;
    let a = run_closed_loop(&s);
    let b = run_closed_loop(&s);
    assert_eq!(fingerprint(&a), fingerprint(&b));

    s.sim.seed = 8;
    let c = run_closed_loop(&s);
    assert_ne!(fingerprint(&a), fingerprint(&c));
}

#[test]
fn csv_has_header_and_one_row_per_step() {
    let s = short(1.0);
    let log = run_closed_loop(&s);
    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), log.records.len());
    assert_eq!(rows.len(), s.steps());
    for row in rows {
        assert_eq!(row.split(',').count(), CSV_COLUMNS.len());
    }
}

#[test]
fn early_progress_toward_goal() {
    let log = run_closed_loop(&short(3.0));
    let first = log.records.first().unwrap().state.rigid.p.norm();
    let last = log.records.last().unwrap().state.rigid.p.norm();
    assert!(last < first - 1.0, "{first} -> {last}");
    assert_eq!(log.metrics().infeasible_solves, 0);
}

#[test]
fn scenario_files_round_trip_through_disk() {
    let dir = std::env::temp_dir().join(format!("vtolsafe-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("s.toml");
    std::fs::write(
        &path,
        "[sim]\nduration = 0.5\n[[obstacle]]\ncenter = [3.0, 3.0, 0.0]\nradius = 0.5\n",
    )
    .unwrap();
    let s = Scenario::from_file(&path).unwrap();
    assert_eq!(s.steps(), 10);
    let log = run_closed_loop(&s);
    let csv = dir.join("out.csv");
    log.save_csv(&csv).unwrap();
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() == s.steps() + 1);
    assert!(matches!(
        Scenario::from_file(&dir.join("missing.toml")),
        Err(Error::Io(_))
    ));
    std::fs::remove_dir_all(&dir).ok();
}
