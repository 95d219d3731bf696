//! Closed-loop simulation: scenarios, the control loop, logs and metrics.

mod closed_loop;
mod log;
mod scenario;

pub use closed_loop::{add_noise, run_closed_loop, run_nominal, NominalStep, ACCEPT_VIOLATION};
pub use log::{format_sig, StepRecord, Summary, TrajectoryLog, CSV_COLUMNS};
pub use scenario::{InputHold, Scenario, SimSettings};
