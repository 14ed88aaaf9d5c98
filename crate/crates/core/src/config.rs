//! The experiment configuration file.
//!
//! One TOML file drives the whole pipeline. Every section and key is
//! optional; anything left out takes its documented default:
//!
//! ```toml
//! [world]                # world units; angles in radians
//! margin_cap = 0.5
//! bounds = { min_x = 0.0, max_x = 1.0, min_y = 0.0, max_y = 1.0 }
//! goal = { x = 0.85, y = 0.85, radius = 0.08 }
//! spawn = { min_x = 0.05, max_x = 0.25, min_y = 0.05, max_y = 0.25 }
//! obstacles = [{ x = 0.4, y = 0.55, radius = 0.1 }, { x = 0.65, y = 0.3, radius = 0.1 }]
//!
//! [dynamics]             # v in units/step, omega in rad/step
//! v = 0.02
//! omega = 0.05
//!
//! [grid]                 # node counts; theta nodes are periodic
//! nx = 101
//! ny = 101
//! ntheta = 64
//!
//! [solver]
//! gamma = 0.98
//! tol = 1e-6
//! max_iters = 100000
//!
//! [filter]
//! epsilon = 0.1
//! alpha = 0.2
//! lambda = 0.05
//! # alpha_init defaults to alpha
//!
//! [pid]
//! kp = 2.0
//! ki = 0.0
//! kd = 0.0
//! # deadband defaults to omega / 2
//!
//! [experiment]
//! n_runs = 16
//! step_cap = 1000
//! goals_per_run = 5
//! base_seed = 0
//! scenarios = ["id", "varspeed", "varsteer", "varspeedsteer"]
//! policies = ["task", "fixed", "acofi"]
//! reset_aci_on_respawn = false
//! jobs = 1
//! log_draws = false
//!
//! [simulate]
//! policy = "acofi"
//! scenario = "id"
//! seed = 0
//!
//! [paths]                # optional defaults for --qtable / --out
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bellman::GridSpec;
use crate::env::{DynamicsConfig, PidGains, Scenario, WorldConfig};
use crate::policies::{FilterConfig, PolicyKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub gamma: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { gamma: 0.98, tol: 1e-6, max_iters: 100_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub epsilon: f64,
    pub alpha: f64,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_init: Option<f64>,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self { epsilon: 0.1, alpha: 0.2, lambda: 0.05, alpha_init: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub n_runs: u64,
    pub step_cap: u64,
    pub goals_per_run: u32,
    pub base_seed: u64,
    pub scenarios: Vec<Scenario>,
    pub policies: Vec<PolicyKind>,
    pub reset_aci_on_respawn: bool,
    pub jobs: usize,
    /// Keep every disturbance draw in memory (and write it out).
    pub log_draws: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            n_runs: 16,
            step_cap: 1000,
            goals_per_run: 5,
            base_seed: 0,
            scenarios: Scenario::ALL.to_vec(),
            policies: PolicyKind::ALL.to_vec(),
            reset_aci_on_respawn: false,
            jobs: 1,
            log_draws: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub policy: PolicyKind,
    pub scenario: Scenario,
    pub seed: u64,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self { policy: PolicyKind::Acofi, scenario: Scenario::Id, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qtable: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub dynamics: DynamicsConfig,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub filter: FilterSettings,
    pub pid: PidGains,
    pub experiment: RunSettings,
    pub simulate: SimulateSettings,
    pub paths: Paths,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            epsilon: self.filter.epsilon,
            alpha_target: self.filter.alpha,
            lambda: self.filter.lambda,
            alpha_init: self.filter.alpha_init.unwrap_or(self.filter.alpha),
            gamma: self.solver.gamma,
        }
    }

    /// Everything the solver needs.
    pub fn validate_solver(&self) -> Result<()> {
        self.world.validate()?;
        self.dynamics.validate()?;
        self.grid.validate()?;
        let s = &self.solver;
        if !(s.gamma > 0.0 && s.gamma < 1.0) {
            return Err(Error::Config(format!("solver.gamma must lie in (0, 1), got {}", s.gamma)));
        }
        if !(s.tol.is_finite() && s.tol > 0.0) {
            return Err(Error::Config(format!("solver.tol must be positive, got {}", s.tol)));
        }
        if s.max_iters == 0 {
            return Err(Error::Config("solver.max_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_solver()?;
        self.filter_config().validate()?;
        if let Some(d) = self.pid.deadband {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::Config("pid.deadband must be nonnegative".into()));
            }
        }
        let e = &self.experiment;
        if e.n_runs == 0 || e.step_cap == 0 || e.goals_per_run == 0 || e.jobs == 0 {
            return Err(Error::Config("n_runs, step_cap, goals_per_run and jobs must all be at least 1".into()));
        }
        if e.scenarios.is_empty() || e.policies.is_empty() {
            return Err(Error::Config("experiment needs at least one scenario and one policy".into()));
        }
        Ok(())
    }
}
