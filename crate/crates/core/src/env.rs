//! Dubins-car world: kinematics, failure margin, termination, spawning and
//! the goal-seeking PID task controller.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rng::{Disturbance, SpawnStream};
use crate::{Error, Result};

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid rounds tiny negative inputs up to exactly TAU
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_pi(a: f64) -> f64 {
    let r = wrap_angle(a);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DubinsState {
    pub px: f64,
    pub py: f64,
    /// Heading in `[0, 2π)`.
    pub theta: f64,
}

impl DubinsState {
    pub fn new(px: f64, py: f64, theta: f64) -> Self {
        Self { px, py, theta: wrap_angle(theta) }
    }
}

/// One of the three steering commands `{-ω, 0, +ω}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Clockwise,
    Straight,
    CounterClockwise,
}

impl Action {
    /// Ordered as `{-ω, 0, +ω}`; this is also the action axis of the Q-table.
    pub const ALL: [Action; 3] = [Action::Clockwise, Action::Straight, Action::CounterClockwise];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn sign(self) -> i8 {
        self as i8 - 1
    }

    pub fn from_sign(s: i64) -> Option<Action> {
        match s {
            -1 => Some(Action::Clockwise),
            0 => Some(Action::Straight),
            1 => Some(Action::CounterClockwise),
            _ => None,
        }
    }

    pub fn omega(self, dyn_: &DynamicsConfig) -> f64 {
        f64::from(self.sign()) * dyn_.omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Speed, world units per step.
    pub v: f64,
    /// Steering magnitude, rad per step.
    pub omega: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { v: 0.02, omega: 0.05 }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v.is_finite() && self.v > 0.0) {
            return Err(Error::Config(format!("dynamics.v must be positive, got {}", self.v)));
        }
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(Error::Config(format!("dynamics.omega must be positive, got {}", self.omega)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    fn is_valid(&self) -> bool {
        [self.min_x, self.max_x, self.min_y, self.max_y].iter().all(|v| v.is_finite())
            && self.min_x <= self.max_x
            && self.min_y <= self.max_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disc {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

impl Disc {
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        (x - self.x).hypot(y - self.y) - self.radius
    }

    fn inside(&self, r: &Rect) -> bool {
        self.x - self.radius >= r.min_x
            && self.x + self.radius <= r.max_x
            && self.y - self.radius >= r.min_y
            && self.y + self.radius <= r.max_y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub bounds: Rect,
    pub obstacles: Vec<Disc>,
    pub goal: Disc,
    pub spawn: Rect,
    /// Upper cap on the failure margin, world units.
    pub margin_cap: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            bounds: Rect { min_x: 0.0, max_x: 1.0, min_y: 0.0, max_y: 1.0 },
            obstacles: vec![Disc { x: 0.4, y: 0.55, radius: 0.10 }, Disc { x: 0.65, y: 0.3, radius: 0.10 }],
            goal: Disc { x: 0.85, y: 0.85, radius: 0.08 },
            spawn: Rect { min_x: 0.05, max_x: 0.25, min_y: 0.05, max_y: 0.25 },
            margin_cap: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !self.bounds.is_valid() || self.bounds.min_x == self.bounds.max_x || self.bounds.min_y == self.bounds.max_y {
            return err("world.bounds must be a nondegenerate rectangle".into());
        }
        if !self.spawn.is_valid() {
            return err("world.spawn must be a rectangle".into());
        }
        if !(self.margin_cap.is_finite() && self.margin_cap > 0.0) {
            return err(format!("world.margin_cap must be positive, got {}", self.margin_cap));
        }
        for (i, d) in self.obstacles.iter().chain(std::iter::once(&self.goal)).enumerate() {
            if !(d.radius.is_finite() && d.radius > 0.0) || !d.inside(&self.bounds) {
                return err(format!("disc #{i} must have positive radius and lie inside bounds"));
            }
        }
        if !(self.spawn.min_x >= self.bounds.min_x
            && self.spawn.max_x <= self.bounds.max_x
            && self.spawn.min_y >= self.bounds.min_y
            && self.spawn.max_y <= self.bounds.max_y)
        {
            return err("world.spawn must lie inside bounds".into());
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            // distance from the disc center to the nearest point of the rectangle
            let cx = o.x.clamp(self.spawn.min_x, self.spawn.max_x);
            let cy = o.y.clamp(self.spawn.min_y, self.spawn.max_y);
            if o.signed_distance(cx, cy) <= 0.0 {
                return err(format!("obstacle #{i} overlaps the spawn region"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Id,
    VarSpeed,
    VarSteer,
    #[serde(rename = "varspeedsteer")]
    VarSpeedAndSteer,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Id, Scenario::VarSpeed, Scenario::VarSteer, Scenario::VarSpeedAndSteer];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Id => "id",
            Scenario::VarSpeed => "varspeed",
            Scenario::VarSteer => "varsteer",
            Scenario::VarSpeedAndSteer => "varspeedsteer",
        }
    }

    fn perturbs_speed(self) -> bool {
        matches!(self, Scenario::VarSpeed | Scenario::VarSpeedAndSteer)
    }

    fn perturbs_steer(self) -> bool {
        matches!(self, Scenario::VarSteer | Scenario::VarSpeedAndSteer)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

/// One step of the discrete Dubins car.
///
/// Position advances along the pre-step heading, then the heading turns.
/// `noise` holds the step's two `U(-1, 1)` draws; only the ones the scenario
/// perturbs are applied. Walls are not enforced here, see [`terminating`].
pub fn dubins_step(
    state: DubinsState,
    action: Action,
    dyn_: &DynamicsConfig,
    scenario: Scenario,
    noise: Disturbance,
) -> DubinsState {
    let mut v = dyn_.v;
    let mut omega = action.omega(dyn_);
    if scenario.perturbs_speed() {
        v += noise.speed * dyn_.v;
    }
    if scenario.perturbs_steer() {
        omega += noise.steer * dyn_.omega;
    }
    DubinsState {
        px: state.px + v * state.theta.cos(),
        py: state.py + v * state.theta.sin(),
        theta: wrap_angle(state.theta + omega),
    }
}

/// Signed distance to the nearest obstacle boundary, capped at `margin_cap`.
/// Negative inside an obstacle.
pub fn failure_margin(state: &DubinsState, world: &WorldConfig) -> f64 {
    margin_at(state.px, state.py, world)
}

pub(crate) fn margin_at(x: f64, y: f64, world: &WorldConfig) -> f64 {
    world.obstacles.iter().map(|o| o.signed_distance(x, y)).fold(world.margin_cap, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminationKind {
    GoalReached,
    WallHit,
    None,
}

pub fn terminating(state: &DubinsState, world: &WorldConfig) -> TerminationKind {
    if world.goal.signed_distance(state.px, state.py) <= 0.0 {
        TerminationKind::GoalReached
    } else if !world.bounds.contains(state.px, state.py) {
        TerminationKind::WallHit
    } else {
        TerminationKind::None
    }
}

/// The `k`-th spawn of an episode: uniform in the spawn rectangle with a
/// uniform heading.
pub fn respawn(stream: &mut SpawnStream, k: u64, world: &WorldConfig) -> DubinsState {
    let [ux, uy, ut] = stream.draw(k);
    let r = &world.spawn;
    DubinsState::new(r.min_x + ux * (r.max_x - r.min_x), r.min_y + uy * (r.max_y - r.min_y), ut * TAU)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Commands below this magnitude go straight. Defaults to `ω / 2`.
    pub deadband: Option<f64>,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 2.0, ki: 0.0, kd: 0.0, deadband: None }
    }
}

/// Heading PID toward the goal center, quantized onto the three steering
/// actions. Ignores obstacles entirely.
#[derive(Debug, Clone)]
pub struct PidController {
    gains: PidGains,
    integral: f64,
    prev_error: Option<f64>,
}

impl PidController {
    pub fn new(gains: PidGains) -> Self {
        Self { gains, integral: 0.0, prev_error: None }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    pub fn act(&mut self, state: &DubinsState, world: &WorldConfig, dyn_: &DynamicsConfig) -> Action {
        let bearing = (world.goal.y - state.py).atan2(world.goal.x - state.px);
        let error = wrap_pi(bearing - state.theta);
        self.integral += error;
        let derivative = self.prev_error.map_or(0.0, |p| error - p);
        self.prev_error = Some(error);
        let desired = self.gains.kp * error + self.gains.ki * self.integral + self.gains.kd * derivative;
        let deadband = self.gains.deadband.unwrap_or(dyn_.omega / 2.0);
        if desired.abs() < deadband {
            Action::Straight
        } else if desired > 0.0 {
            Action::CounterClockwise
        } else {
            Action::Clockwise
        }
    }
}

/// Task action from a freshly reset controller.
pub fn pid_task_action(state: &DubinsState, world: &WorldConfig, gains: PidGains, dyn_: &DynamicsConfig) -> Action {
    PidController::new(gains).act(state, world, dyn_)
}
