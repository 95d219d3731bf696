use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use vtolsafe::linear_mpc::{MpcParams, SafetyMode};
use vtolsafe::sim::{run_closed_loop, Scenario, TrajectoryLog};
use vtolsafe::{verify, Error};

#[derive(Parser)]
#[command(
    name = "vtolsafe",
    version,
    about = "Safe quadrotor navigation with flat-model MPC and control barrier functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its CSV log.
    Run {
        /// Scenario TOML file; the built-in reference scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Overrides the safety mode of the scenario file.
        #[arg(long)]
        mode: Option<SafetyMode>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate every (gamma, horizon) pair in parallel.
    Sweep {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        gamma: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        horizon: Vec<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the numerical self-checks.
    Verify,
}

fn load(path: Option<&Path>) -> Result<Scenario, Error> {
    match path {
        Some(p) => Scenario::from_file(p),
        None => Ok(Scenario::reference()),
    }
}

fn save(log: &TrajectoryLog, dir: &Path, name: &str) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    log.save_csv(&path)?;
    Ok(path)
}

fn report(name: &str, log: &TrajectoryLog, path: &Path) {
    println!("[{name}] wrote {}", path.display());
    for line in log.metrics().to_string().lines() {
        println!("[{name}] {line}");
    }
    if let Some(reason) = &log.aborted {
        println!("[{name}] aborted: {reason}");
    }
}

fn exit_code(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) | Error::Parse(_) | Error::Io(_) => ExitCode::from(1),
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { scenario, mode, out } => run(scenario.as_deref(), mode, &out),
        Command::Sweep {
            scenario,
            gamma,
            horizon,
            out,
        } => sweep(scenario.as_deref(), &gamma, &horizon, &out),
        Command::Verify => {
            let checks = verify::run_all();
            for c in &checks {
                println!("{c}");
            }
            Ok(if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run(path: Option<&Path>, mode: Option<SafetyMode>, out: &Path) -> Result<ExitCode, Error> {
    let mut scenario = load(path)?;
    if let Some(mode) = mode {
        scenario = scenario.with_mode(mode)?;
    }
    let log = run_closed_loop(&scenario);
    let name = format!("run_{}.csv", scenario.cfg.mode);
    let written = save(&log, out, &name)?;
    report(&scenario.cfg.mode.to_string(), &log, &written);
    Ok(if log.aborted.is_some() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn sweep(path: Option<&Path>, gammas: &[f64], horizons: &[usize], out: &Path) -> Result<ExitCode, Error> {
    let base = load(path)?;
    let mut jobs = Vec::new();
    for &gamma in gammas {
        for &n in horizons {
            let params = MpcParams {
                gamma,
                n,
                ..base.mpc.clone()
            };
            jobs.push((format!("sweep_g{gamma}_n{n}"), base.with_mpc(params)?));
        }
    }
    let results: Vec<(String, TrajectoryLog)> = jobs
        .into_par_iter()
        .map(|(name, s)| (name, run_closed_loop(&s)))
        .collect();
    let mut aborted = false;
    for (name, log) in &results {
        let written = save(log, out, &format!("{name}.csv"))?;
        report(name, log, &written);
        aborted |= log.aborted.is_some();
    }
    Ok(if aborted { ExitCode::from(2) } else { ExitCode::SUCCESS })
}
