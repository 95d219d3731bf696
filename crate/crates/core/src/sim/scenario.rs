use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dfl::{flat_map, THRUST_EPSILON};
use crate::error::{Error, Result};
use crate::linear_mpc::{cbf_value, Goal, MpcConfig, MpcParams, Obstacle, SafetyMode};
use crate::qcqp::SolverSettings;
use crate::vehicle::{check_attitude, BodyParams, ExtendedState, RigidState};

/// How the true state is advanced between control instants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputHold {
    /// `u` from the DFL law is held over the whole period.
    #[default]
    Input,
    /// `v` is held and `u` is recomputed from the current state at every
    /// integrator stage.
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub duration: f64,
    pub noise_variance: f64,
    pub seed: u64,
    /// Plant integration steps per control period.
    pub substeps: usize,
    pub hold: InputHold,
    /// Position error below which the vehicle counts as settled (m).
    pub settle_threshold: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            duration: 20.0,
            noise_variance: 0.0,
            seed: 0,
            substeps: 1,
            hold: InputHold::Input,
            settle_threshold: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: BodyParams,
    pub initial: ExtendedState,
    pub goal: Goal,
    pub obstacles: Vec<Obstacle>,
    pub mpc: MpcParams,
    pub cfg: MpcConfig,
    pub solver: SolverSettings,
    pub sim: SimSettings,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    body: BodyParams,
    #[serde(default)]
    initial: InitialSection,
    #[serde(default)]
    goal: GoalSection,
    #[serde(default)]
    obstacle: Vec<ObstacleSection>,
    #[serde(default)]
    mpc: MpcParams,
    #[serde(default)]
    solver: SolverSettings,
    #[serde(default)]
    sim: SimSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct InitialSection {
    p: [f64; 3],
    eulers: [f64; 3],
    v: [f64; 3],
    rates: [f64; 3],
    /// Defaults to the hover thrust.
    thrust: Option<f64>,
    thrust_rate: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GoalSection {
    p: [f64; 3],
    yaw: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleSection {
    center: [f64; 3],
    radius: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SimSection {
    duration: f64,
    noise_variance: f64,
    seed: u64,
    substeps: usize,
    hold: InputHold,
    settle_threshold: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimSettings::default();
        Self {
            duration: s.duration,
            noise_variance: s.noise_variance,
            seed: s.seed,
            substeps: s.substeps,
            hold: s.hold,
            settle_threshold: s.settle_threshold,
        }
    }
}

impl Scenario {
    pub fn new(
        params: BodyParams,
        initial: ExtendedState,
        goal: Goal,
        obstacles: Vec<Obstacle>,
        mpc: MpcParams,
        solver: SolverSettings,
        sim: SimSettings,
    ) -> Result<Self> {
        let cfg = MpcConfig::from_params(&mpc)?;
        let s = Self {
            params,
            initial,
            goal,
            obstacles,
            mpc,
            cfg,
            solver,
            sim,
        };
        s.validate()?;
        Ok(s)
    }

    /// Hover at (7, 7, 0) heading for the origin past a unit sphere near the
    /// middle of the path, slightly off the straight line.
    pub fn reference() -> Self {
        let params = BodyParams::default();
        let obstacle = Obstacle::new(Vector3::new(3.6, 3.4, 0.0), 1.0).expect("valid obstacle");
        Self::new(
            params,
            ExtendedState::hover(Vector3::new(7.0, 7.0, 0.0), 0.0, &params),
            Goal::default(),
            vec![obstacle],
            MpcParams::default(),
            SolverSettings::default(),
            SimSettings::default(),
        )
        .expect("reference scenario is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text)?;
        let params = file.body;
        params.validate()?;
        let i = &file.initial;
        let initial = ExtendedState {
            rigid: RigidState {
                p: Vector3::from(i.p),
                eulers: Vector3::from(i.eulers),
                v: Vector3::from(i.v),
                euler_rates: Vector3::from(i.rates),
            },
            thrust: i.thrust.unwrap_or_else(|| params.hover_thrust()),
            thrust_rate: i.thrust_rate,
        };
        let goal = Goal {
            p: Vector3::from(file.goal.p),
            yaw: file.goal.yaw,
        };
        let obstacles = file
            .obstacle
            .iter()
            .map(|o| Obstacle::new(Vector3::from(o.center), o.radius))
            .collect::<Result<Vec<_>>>()?;
        let sim = SimSettings {
            duration: file.sim.duration,
            noise_variance: file.sim.noise_variance,
            seed: file.sim.seed,
            substeps: file.sim.substeps,
            hold: file.sim.hold,
            settle_threshold: file.sim.settle_threshold,
        };
        Self::new(params, initial, goal, obstacles, file.mpc, file.solver, sim)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.solver.validate()?;
        self.cfg.validate()?;
        let sim = &self.sim;
        if !(sim.duration > 0.0 && sim.duration.is_finite()) {
            return Err(Error::Config(format!(
                "duration must be positive, got {}",
                sim.duration
            )));
        }
        if !(sim.noise_variance >= 0.0 && sim.noise_variance.is_finite()) {
            return Err(Error::Config(format!(
                "noise variance must be nonnegative, got {}",
                sim.noise_variance
            )));
        }
        if sim.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        if !(sim.settle_threshold > 0.0) {
            return Err(Error::Config("settle threshold must be positive".into()));
        }
        if !self.initial.is_finite() {
            return Err(Error::Config("initial state is not finite".into()));
        }
        check_attitude(&self.initial.rigid.eulers).map_err(|e| Error::Config(format!("initial state: {e}")))?;
        if !(self.initial.thrust > THRUST_EPSILON) {
            return Err(Error::Config(format!(
                "initial thrust {} must exceed {THRUST_EPSILON}",
                self.initial.thrust
            )));
        }
        let z0 = flat_map(&self.initial, &self.params)?;
        for (i, obs) in self.obstacles.iter().enumerate() {
            if cbf_value(&z0, obs) < 0.0 {
                return Err(Error::Config(format!("initial position lies inside obstacle {i}")));
            }
        }
        Ok(())
    }

    pub fn with_mode(&self, mode: SafetyMode) -> Result<Self> {
        self.with_mpc(MpcParams {
            mode,
            ..self.mpc.clone()
        })
    }

    /// Copy with different MPC parameters; recomputes the terminal ingredients.
    pub fn with_mpc(&self, mpc: MpcParams) -> Result<Self> {
        Self::new(
            self.params,
            self.initial,
            self.goal,
            self.obstacles.clone(),
            mpc,
            self.solver,
            self.sim,
        )
    }

    /// Number of control periods in the run.
    pub fn steps(&self) -> usize {
        (self.sim.duration / self.cfg.model.delta).round() as usize
    }
}
