//! Seeded experiment runs, their metrics, and the certificate checks.

use std::io::Write;

use rayon::prelude::*;

use crate::bellman::QTable;
use crate::config::ExperimentConfig;
use crate::conformal::{coverage_bound, lower_bound, safety_target, AciState};
use crate::env::{respawn, terminating, PidController, Scenario, TerminationKind};
use crate::policies::{episode_step, FilterConfig, PolicyKind, PolicyTag, StepContext};
use crate::rng::{Disturbance, DisturbanceStream, SpawnStream};
use crate::trace::StepRecord;
use crate::{Error, Result};

/// Slack below zero that still counts as a pass; covers rounding in the
/// running averages only.
pub const FP_TOL: f64 = 64.0 * f64::EPSILON;

/// Metrics of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub goal_reaches: u32,
    pub wall_hits: u32,
    /// All goal reaches happened before the step cap.
    pub success: bool,
    pub safety: TraceMetrics,
}

/// The part of [`RunMetrics`] that a trace alone determines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceMetrics {
    /// `min_t V(y_t)` over visited states.
    pub min_v: f64,
    /// Steps with `V(y_t) <= ε`.
    pub unsafe_steps: u64,
    pub safe_policy_steps: u64,
    /// Steps with `l(y_t) < 0`, i.e. inside an obstacle.
    pub obstacle_steps: u64,
    pub total_steps: u64,
}

impl Default for TraceMetrics {
    fn default() -> Self {
        Self { min_v: f64::INFINITY, unsafe_steps: 0, safe_policy_steps: 0, obstacle_steps: 0, total_steps: 0 }
    }
}

impl TraceMetrics {
    fn observe(&mut self, v: f64, l: f64, policy: PolicyTag, epsilon: f64) {
        self.min_v = self.min_v.min(v);
        self.unsafe_steps += u64::from(v <= epsilon);
        self.safe_policy_steps += u64::from(policy == PolicyTag::Safe);
        self.obstacle_steps += u64::from(l < 0.0);
        self.total_steps += 1;
    }
}

/// Recomputes the trace-determined metrics from stored rows.
pub fn trace_metrics(trace: &[StepRecord], qtable: &QTable, epsilon: f64) -> TraceMetrics {
    let mut m = TraceMetrics::default();
    for r in trace {
        m.observe(qtable.v_value(&r.state), r.l, r.policy, epsilon);
    }
    m
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub policy: PolicyKind,
    pub scenario: Scenario,
    pub seed: u64,
    pub trace: Vec<StepRecord>,
    pub metrics: RunMetrics,
    /// `(step, draw)` pairs, when draw logging is on.
    pub draws: Option<Vec<(u64, Disturbance)>>,
}

impl Episode {
    /// `traces/<policy>_<scenario>_seed<N>.csv` style stem.
    pub fn file_stem(&self) -> String {
        format!("{}_{}_seed{}", self.policy, self.scenario, self.seed)
    }
}

/// Runs one seeded episode until the goal count or the step cap.
pub fn run_episode(
    policy: PolicyKind,
    scenario: Scenario,
    seed: u64,
    cfg: &ExperimentConfig,
    qtable: &QTable,
) -> Result<Episode> {
    cfg.validate()?;
    let filter = cfg.filter_config();
    let world = &cfg.world;
    let dyn_ = &cfg.dynamics;
    let exp = &cfg.experiment;
    let ctx = StepContext { qtable, world, dyn_, scenario, filter: &filter };

    let mut noise = if exp.log_draws { DisturbanceStream::with_log(seed) } else { DisturbanceStream::new(seed) };
    let mut spawns = SpawnStream::new(seed);
    let mut pid = PidController::new(cfg.pid);

    let start = respawn(&mut spawns, 0, world);
    let mut respawns = 1;
    let task = pid.act(&start, world, dyn_);
    let mut bundle = ctx.start(policy, start, task);

    let mut trace = Vec::with_capacity(exp.step_cap.min(1 << 16) as usize);
    let mut safety = TraceMetrics::default();
    let (mut goals, mut walls) = (0u32, 0u32);
    for step in 0..exp.step_cap {
        safety.observe(qtable.v_value(&bundle.state), bundle.l, bundle.policy, filter.epsilon);
        let (record, mut next) = episode_step(policy, bundle, &ctx, noise.draw(step), &mut pid);
        trace.push(record);
        let term = terminating(&next.state, world);
        match term {
            TerminationKind::GoalReached => goals += 1,
            TerminationKind::WallHit => walls += 1,
            TerminationKind::None => {}
        }
        if goals >= exp.goals_per_run {
            break;
        }
        if term != TerminationKind::None {
            let s = respawn(&mut spawns, respawns, world);
            respawns += 1;
            pid.reset();
            let task = pid.act(&s, world, dyn_);
            next =
                if exp.reset_aci_on_respawn { ctx.start(policy, s, task) } else { ctx.relocate(policy, next, s, task) };
        }
        bundle = next;
    }

    Ok(Episode {
        policy,
        scenario,
        seed,
        trace,
        metrics: RunMetrics { goal_reaches: goals, wall_hits: walls, success: goals >= exp.goals_per_run, safety },
        draws: noise.take_log(),
    })
}

/// Every `(policy, scenario, run)` of the configured matrix, ordered policy
/// first, then scenario, then seed. At most `jobs` episodes run at once.
pub fn run_matrix(cfg: &ExperimentConfig, qtable: &QTable, jobs: usize) -> Result<Vec<Episode>> {
    cfg.validate()?;
    let exp = &cfg.experiment;
    let mut jobs_list = Vec::new();
    for &p in &exp.policies {
        for &s in &exp.scenarios {
            for i in 0..exp.n_runs {
                jobs_list.push((p, s, exp.base_seed.wrapping_add(i)));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| jobs_list.par_iter().map(|&(p, s, seed)| run_episode(p, s, seed, cfg, qtable)).collect())
}

/// Table-style averages for one policy and scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub runs: usize,
    pub success_rate: f64,
    pub goal_reaches: f64,
    pub wall_hits: f64,
    pub min_v: f64,
    pub unsafe_steps: f64,
    pub safe_policy_steps: f64,
    pub obstacle_steps: f64,
    pub total_steps: f64,
}

impl SummaryRow {
    /// `"mean count/mean total"`, one decimal.
    pub fn ratio(count: f64, total: f64) -> String {
        format!("{count:.1}/{total:.1}")
    }

    pub fn p_unsafe(&self) -> String {
        Self::ratio(self.unsafe_steps, self.total_steps)
    }

    pub fn p_safe(&self) -> String {
        Self::ratio(self.safe_policy_steps, self.total_steps)
    }
}

pub fn aggregate(metrics: &[RunMetrics]) -> Result<SummaryRow> {
    if metrics.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = metrics.len() as f64;
    let mean = |f: &dyn Fn(&RunMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    Ok(SummaryRow {
        runs: metrics.len(),
        success_rate: mean(&|m| f64::from(u8::from(m.success))),
        goal_reaches: mean(&|m| f64::from(m.goal_reaches)),
        wall_hits: mean(&|m| f64::from(m.wall_hits)),
        min_v: mean(&|m| m.safety.min_v),
        unsafe_steps: mean(&|m| m.safety.unsafe_steps as f64),
        safe_policy_steps: mean(&|m| m.safety.safe_policy_steps as f64),
        obstacle_steps: mean(&|m| m.safety.obstacle_steps as f64),
        total_steps: mean(&|m| m.safety.total_steps as f64),
    })
}

pub const SUMMARY_HEADER: &str = "policy,scenario,runs,success_rate,goal_reaches,wall_hits,min_v,\
unsafe_steps,safe_policy_steps,obstacle_steps,total_steps,p_unsafe,p_safe";

/// One summary row per `(policy, scenario)` in first-seen order.
pub fn summarize(episodes: &[Episode]) -> Result<Vec<(PolicyKind, Scenario, SummaryRow)>> {
    let mut keys: Vec<(PolicyKind, Scenario)> = Vec::new();
    for e in episodes {
        if !keys.contains(&(e.policy, e.scenario)) {
            keys.push((e.policy, e.scenario));
        }
    }
    keys.into_iter()
        .map(|(p, s)| {
            let m: Vec<RunMetrics> =
                episodes.iter().filter(|e| e.policy == p && e.scenario == s).map(|e| e.metrics).collect();
            Ok((p, s, aggregate(&m)?))
        })
        .collect()
}

pub fn write_summary(rows: &[(PolicyKind, Scenario, SummaryRow)], w: impl Write) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "{SUMMARY_HEADER}")?;
    for (p, s, r) in rows {
        writeln!(
            w,
            "{p},{s},{},{},{},{},{},{},{},{},{},{},{}",
            r.runs,
            r.success_rate,
            r.goal_reaches,
            r.wall_hits,
            r.min_v,
            r.unsafe_steps,
            r.safe_policy_steps,
            r.obstacle_steps,
            r.total_steps,
            r.p_unsafe(),
            r.p_safe()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of checking the coverage certificates on one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub steps: usize,
    /// Calibration segments (the trace restarts at `t = 1` for each).
    pub segments: usize,
    /// `|avg err - α| <= bound` at every prefix.
    pub thm1_ok: bool,
    /// `avg err - α <= bound` at every prefix.
    pub thm1_upper_ok: bool,
    /// `avg 1[v_next >= B] >= 1 - α - bound` at every prefix.
    pub thm2_ok: bool,
    /// `1[v_next >= B_t] >= 1 - err_t` at every step.
    pub pointwise_ok: bool,
    /// The recorded err, q, B and R agree with a fresh replay of the update.
    pub replay_ok: bool,
    pub thm1_worst_slack: f64,
    pub thm1_upper_worst_slack: f64,
    pub thm2_worst_slack: f64,
    /// Prefix length where the two-sided check is tightest, per segment start.
    pub thm1_worst_at: u64,
    pub pointwise_violations: usize,
    pub replay_mismatches: usize,
    pub final_avg_err: f64,
}

impl TheoremReport {
    pub fn worst_slack(&self) -> f64 {
        self.thm1_worst_slack.min(self.thm2_worst_slack)
    }

    /// Everything the certificate of the next-step bound relies on.
    pub fn passed(&self) -> bool {
        self.thm1_ok && self.thm2_ok && self.pointwise_ok && self.replay_ok
    }

    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("steps", self.steps.to_string()),
            ("segments", self.segments.to_string()),
            ("thm1_ok", self.thm1_ok.to_string()),
            ("thm1_upper_ok", self.thm1_upper_ok.to_string()),
            ("thm2_ok", self.thm2_ok.to_string()),
            ("pointwise_ok", self.pointwise_ok.to_string()),
            ("replay_ok", self.replay_ok.to_string()),
            ("worst_slack", self.worst_slack().to_string()),
            ("thm1_worst_slack", self.thm1_worst_slack.to_string()),
            ("thm1_worst_at", self.thm1_worst_at.to_string()),
            ("thm1_upper_worst_slack", self.thm1_upper_worst_slack.to_string()),
            ("thm2_worst_slack", self.thm2_worst_slack.to_string()),
            ("pointwise_violations", self.pointwise_violations.to_string()),
            ("replay_mismatches", self.replay_mismatches.to_string()),
            ("final_avg_err", self.final_avg_err.to_string()),
        ]
    }
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

/// Checks both coverage certificates at every prefix of every calibration
/// segment and replays the calibration to make sure the trace is consistent.
pub fn verify_theorems(trace: &[StepRecord], cfg: &FilterConfig) -> Result<TheoremReport> {
    cfg.validate()?;
    if trace.is_empty() {
        return Err(Error::MalformedTrace("trace has no steps".into()));
    }
    let mut rep = TheoremReport {
        steps: trace.len(),
        segments: 0,
        thm1_ok: true,
        thm1_upper_ok: true,
        thm2_ok: true,
        pointwise_ok: true,
        replay_ok: true,
        thm1_worst_slack: f64::INFINITY,
        thm1_upper_worst_slack: f64::INFINITY,
        thm2_worst_slack: f64::INFINITY,
        thm1_worst_at: 0,
        pointwise_violations: 0,
        replay_mismatches: 0,
        final_avg_err: 0.0,
    };
    let alpha = cfg.alpha_target;
    let (mut errs, mut covered) = (0u64, 0u64);
    let mut aci = AciState::new(alpha, cfg.lambda, cfg.alpha_init);
    for (i, r) in trace.iter().enumerate() {
        if r.t == 1 {
            rep.segments += 1;
            errs = 0;
            covered = 0;
            aci = cfg.new_aci();
        } else if i == 0 || r.t != trace[i - 1].t + 1 {
            return Err(Error::MalformedTrace(format!("row {}: step {} does not follow the previous one", i + 1, r.t)));
        }

        let upd = aci.record_and_update(r.q_theta, r.r);
        let replay_ok = upd.err == r.err
            && same(upd.q_used, r.quantile)
            && same(lower_bound(r.q_theta, r.quantile, r.l, cfg.gamma), r.b)
            && same(safety_target(r.l, r.v_next, cfg.gamma), r.r);
        if !replay_ok {
            rep.replay_mismatches += 1;
            rep.replay_ok = false;
        }

        let cover = r.v_next >= r.b;
        if !cover && !r.err {
            rep.pointwise_violations += 1;
            rep.pointwise_ok = false;
        }
        errs += u64::from(r.err);
        covered += u64::from(cover);
        let big_t = r.t as f64;
        let bound = coverage_bound(cfg.alpha_init, cfg.lambda, r.t);
        let avg_err = errs as f64 / big_t;
        let s1 = bound - (avg_err - alpha).abs();
        let s1u = bound - (avg_err - alpha);
        let s2 = covered as f64 / big_t - (1.0 - alpha - bound);
        if s1 < rep.thm1_worst_slack {
            rep.thm1_worst_slack = s1;
            rep.thm1_worst_at = r.t;
        }
        rep.thm1_upper_worst_slack = rep.thm1_upper_worst_slack.min(s1u);
        rep.thm2_worst_slack = rep.thm2_worst_slack.min(s2);
        rep.final_avg_err = avg_err;
    }
    rep.thm1_ok = rep.thm1_worst_slack >= -FP_TOL;
    rep.thm1_upper_ok = rep.thm1_upper_worst_slack >= -FP_TOL;
    rep.thm2_ok = rep.thm2_worst_slack >= -FP_TOL;
    Ok(rep)
}
