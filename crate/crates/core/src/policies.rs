//! The three evaluated controllers and the closed-loop step they share.
//!
//! - `task`: the PID controller, unfiltered.
//! - `fixed`: use the task action when `Q(y, task) >= ε`, else the safest action.
//! - `acofi`: use the task action when
//!   `Q(y, task) >= q + γ ε + (1 - γ) l(y)` with `q` the current conformal
//!   quantile, else the safest action.
//!
//! Every controller runs the same calibration bookkeeping so all traces carry
//! the same columns; only `acofi` lets the quantile influence its choices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bellman::QTable;
use crate::conformal::{lower_bound, safety_target, AciState};
use crate::env::{
    dubins_step, failure_margin, Action, DubinsState, DynamicsConfig, PidController, Scenario, WorldConfig,
};
use crate::rng::Disturbance;
use crate::trace::StepRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Safety margin `ε`.
    pub epsilon: f64,
    /// Target miscoverage `α`.
    pub alpha_target: f64,
    /// Learning rate `λ`.
    pub lambda: f64,
    /// Initial effective miscoverage `α_1`.
    pub alpha_init: f64,
    /// Discount, shared with the Q-table.
    pub gamma: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, alpha_target: 0.2, lambda: 0.05, alpha_init: 0.2, gamma: 0.98 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("filter.epsilon must be positive and finite, got {}", self.epsilon));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad(format!("filter.lambda must be positive, got {}", self.lambda));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.alpha_target) {
            return bad(format!("filter.alpha must lie in [0, 1], got {}", self.alpha_target));
        }
        if !self.alpha_init.is_finite() {
            return bad("filter.alpha_init must be finite".into());
        }
        Ok(())
    }

    pub fn new_aci(&self) -> AciState {
        AciState::new(self.alpha_target, self.lambda, self.alpha_init)
    }
}

/// Which controller produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyTag {
    Task,
    Safe,
}

impl PolicyTag {
    pub fn name(self) -> &'static str {
        match self {
            PolicyTag::Task => "task",
            PolicyTag::Safe => "safe",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "task" => Some(PolicyTag::Task),
            "safe" => Some(PolicyTag::Safe),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Task,
    Fixed,
    Acofi,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Task, PolicyKind::Fixed, PolicyKind::Acofi];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Task => "task",
            PolicyKind::Fixed => "fixed",
            PolicyKind::Acofi => "acofi",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

pub fn fixed_threshold_policy(
    state: &DubinsState,
    qtable: &QTable,
    task_action: Action,
    epsilon: f64,
) -> (Action, PolicyTag) {
    if qtable.q_value(state, task_action) >= epsilon {
        (task_action, PolicyTag::Task)
    } else {
        (qtable.safest_action(state), PolicyTag::Safe)
    }
}

/// `q + γ ε + (1 - γ) l`, the value the task action's Q must reach.
pub fn acofi_threshold(quantile: f64, l: f64, cfg: &FilterConfig) -> f64 {
    quantile + cfg.gamma * cfg.epsilon + (1.0 - cfg.gamma) * l
}

pub fn acofi_select(
    state_next: &DubinsState,
    qtable: &QTable,
    aci_quantile: f64,
    l_next: f64,
    cfg: &FilterConfig,
    task_action: Action,
) -> (Action, PolicyTag) {
    if qtable.q_value(state_next, task_action) >= acofi_threshold(aci_quantile, l_next, cfg) {
        (task_action, PolicyTag::Task)
    } else {
        (qtable.safest_action(state_next), PolicyTag::Safe)
    }
}

/// Everything the closed loop carries from one step to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBundle {
    pub state: DubinsState,
    pub action: Action,
    pub policy: PolicyTag,
    /// `l(state)`.
    pub l: f64,
    pub aci: AciState,
}

/// Read-only inputs of a closed-loop step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub qtable: &'a QTable,
    pub world: &'a WorldConfig,
    pub dyn_: &'a DynamicsConfig,
    pub scenario: Scenario,
    pub filter: &'a FilterConfig,
}

impl StepContext<'_> {
    /// The controller's choice at `state` given the calibration in force.
    pub fn select(
        &self,
        kind: PolicyKind,
        state: &DubinsState,
        l: f64,
        aci: &AciState,
        task: Action,
    ) -> (Action, PolicyTag) {
        match kind {
            PolicyKind::Task => (task, PolicyTag::Task),
            PolicyKind::Fixed => fixed_threshold_policy(state, self.qtable, task, self.filter.epsilon),
            PolicyKind::Acofi => acofi_select(state, self.qtable, aci.quantile(), l, self.filter, task),
        }
    }

    /// Starts calibration from scratch at `state`. The adaptive filter has
    /// no history to judge the task action by, so it opens with the safest
    /// action.
    pub fn start(&self, kind: PolicyKind, state: DubinsState, task: Action) -> EpisodeBundle {
        let l = failure_margin(&state, self.world);
        let aci = self.filter.new_aci();
        let (action, policy) = match kind {
            PolicyKind::Acofi => (self.qtable.safest_action(&state), PolicyTag::Safe),
            _ => self.select(kind, &state, l, &aci, task),
        };
        EpisodeBundle { state, action, policy, l, aci }
    }

    /// Replaces the bundle's state (after a respawn) and re-selects the
    /// action, keeping the calibration history.
    pub fn relocate(&self, kind: PolicyKind, bundle: EpisodeBundle, state: DubinsState, task: Action) -> EpisodeBundle {
        let l = failure_margin(&state, self.world);
        let (action, policy) = self.select(kind, &state, l, &bundle.aci, task);
        EpisodeBundle { state, action, policy, l, ..bundle }
    }
}

/// One closed-loop iteration: apply `u_t`, score the prediction against the
/// realized target, update calibration, then choose `u_{t+1}`.
pub fn episode_step(
    kind: PolicyKind,
    bundle: EpisodeBundle,
    ctx: &StepContext<'_>,
    noise: Disturbance,
    pid: &mut PidController,
) -> (StepRecord, EpisodeBundle) {
    let EpisodeBundle { state, action, policy, l, mut aci } = bundle;
    let gamma = ctx.filter.gamma;

    let next = dubins_step(state, action, ctx.dyn_, ctx.scenario, noise);
    let q_theta = ctx.qtable.q_value(&state, action);
    let v_next = ctx.qtable.v_value(&next);
    let r = safety_target(l, v_next, gamma);
    let upd = aci.record_and_update(q_theta, r);
    let record = StepRecord {
        t: aci.steps(),
        state,
        action,
        policy,
        l,
        q_theta,
        r,
        err: upd.err,
        quantile: upd.q_used,
        b: lower_bound(q_theta, upd.q_used, l, gamma),
        v_next,
    };

    let l_next = failure_margin(&next, ctx.world);
    let task = pid.act(&next, ctx.world, ctx.dyn_);
    let (action, policy) = ctx.select(kind, &next, l_next, &aci, task);
    (record, EpisodeBundle { state: next, action, policy, l: l_next, aci })
}

/// [`episode_step`] for the adaptive conformal filter.
pub fn acofi_episode_step(
    bundle: EpisodeBundle,
    ctx: &StepContext<'_>,
    noise: Disturbance,
    pid: &mut PidController,
) -> (StepRecord, EpisodeBundle) {
    episode_step(PolicyKind::Acofi, bundle, ctx, noise, pid)
}
