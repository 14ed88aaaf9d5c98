//! Adaptive conformal safety filtering for a Dubins car.
//!
//! The crate is split along the pipeline:
//!
//! - [`env`]: the Dubins world, its failure margin, termination and the
//!   task PID controller, plus the in- and out-of-distribution dynamics.
//! - [`rng`]: counter-addressed random streams so every policy sees the same
//!   disturbance at the same step.
//! - [`bellman`]: the discounted safety Q-function solved by value iteration on
//!   a grid, with trilinear evaluation at continuous states.
//! - [`conformal`]: score, order-statistic quantile and the adaptive
//!   miscoverage update, with the certified lower bound on the next value.
//! - [`policies`]: task, fixed-threshold and adaptive-threshold controllers.
//! - [`harness`]: seeded episodes, metrics, aggregation and certificate checks.
//! - [`trace`] and [`config`]: the on-disk formats.

pub mod bellman;
pub mod config;
pub mod conformal;
pub mod env;
mod error;
pub mod harness;
pub mod policies;
pub mod rng;
pub mod trace;

pub use bellman::{GridSpec, QTable, SafetyBellman, SolveReport};
pub use config::ExperimentConfig;
pub use conformal::AciState;
pub use env::{Action, DubinsState, DynamicsConfig, Scenario, TerminationKind, WorldConfig};
pub use error::{Error, Result};
pub use harness::{Episode, RunMetrics, SummaryRow, TheoremReport};
pub use policies::{FilterConfig, PolicyKind, PolicyTag};
pub use trace::StepRecord;
