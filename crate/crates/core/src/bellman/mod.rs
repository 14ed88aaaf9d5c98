//! Discounted safety Q-function on a regular `(x, y, θ)` grid.
//!
//! The backup at every node and action is
//!
//! ```text
//! Q(y, u) <- (1 - γ) l(y) + γ min{ l(y), max_u' Q(f(y, u), u') }
//! ```
//!
//! with `f` the in-distribution Dubins step and the successor value read by
//! trilinear interpolation (heading periodic, positions clamped to the grid).
//! Iterating from `Q = l` with synchronous sweeps converges geometrically since
//! the operator is a `γ`-contraction in the sup norm.

mod io;

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::safety_target;
use crate::env::{margin_at, wrap_angle, Action, DubinsState, DynamicsConfig, Rect, WorldConfig};
use crate::{Error, Result};

pub use io::{FORMAT_VERSION, MAGIC};

const N_ACTIONS: usize = 3;
// Coordinates within this many cell widths of a node are treated as on it, so
// node states reproduce stored values exactly despite rounding in `(x - x0) / h`.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Nodes along x, spanning the world bounds inclusively.
    pub nx: usize,
    /// Nodes along y, spanning the world bounds inclusively.
    pub ny: usize,
    /// Heading nodes at `k · 2π / ntheta`, periodic.
    pub ntheta: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nx: 101, ny: 101, ntheta: 64 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 || self.ntheta < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2 nodes per axis, got {}x{}x{}",
                self.nx, self.ny, self.ntheta
            )));
        }
        if self.nx.checked_mul(self.ny).and_then(|n| n.checked_mul(self.ntheta * N_ACTIONS)).is_none()
            || self.nx > u32::MAX as usize
            || self.ny > u32::MAX as usize
            || self.ntheta > u32::MAX as usize
        {
            return Err(Error::Config("grid is too large".into()));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny * self.ntheta
    }
}

/// `value = (1 - w) f[i0] + w f[i1]` along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Stencil {
    i0: usize,
    i1: usize,
    w: f64,
}

fn snap(f: f64) -> f64 {
    let r = f.round();
    if (f - r).abs() < SNAP {
        r
    } else {
        f
    }
}

#[inline]
fn lerp(a: f64, b: f64, w: f64) -> f64 {
    (1.0 - w) * a + w * b
}

/// Geometry of a grid laid over a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub spec: GridSpec,
    pub bounds: Rect,
    hx: f64,
    hy: f64,
    ht: f64,
}

impl Grid {
    pub fn new(spec: GridSpec, bounds: Rect) -> Result<Self> {
        spec.validate()?;
        let hx = (bounds.max_x - bounds.min_x) / (spec.nx - 1) as f64;
        let hy = (bounds.max_y - bounds.min_y) / (spec.ny - 1) as f64;
        if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
            return Err(Error::Config("grid bounds must have positive finite extent".into()));
        }
        Ok(Self { spec, bounds, hx, hy, ht: TAU / spec.ntheta as f64 })
    }

    pub fn node_x(&self, i: usize) -> f64 {
        self.bounds.min_x + i as f64 * self.hx
    }

    pub fn node_y(&self, j: usize) -> f64 {
        self.bounds.min_y + j as f64 * self.hy
    }

    pub fn node_theta(&self, k: usize) -> f64 {
        k as f64 * self.ht
    }

    /// Heading cell width `h`.
    pub fn theta_step(&self) -> f64 {
        self.ht
    }

    pub fn node_state(&self, i: usize, j: usize, k: usize) -> DubinsState {
        DubinsState { px: self.node_x(i), py: self.node_y(j), theta: self.node_theta(k) }
    }

    #[inline]
    fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.spec.ny + j) * self.spec.ntheta + k
    }

    fn linear(coord: f64, origin: f64, h: f64, n: usize) -> Stencil {
        let f = snap((coord - origin) / h).clamp(0.0, (n - 1) as f64);
        let i0 = (f.floor() as usize).min(n - 2);
        Stencil { i0, i1: i0 + 1, w: f - i0 as f64 }
    }

    fn stencil_x(&self, x: f64) -> Stencil {
        Self::linear(x, self.bounds.min_x, self.hx, self.spec.nx)
    }

    fn stencil_y(&self, y: f64) -> Stencil {
        Self::linear(y, self.bounds.min_y, self.hy, self.spec.ny)
    }

    fn stencil_theta(&self, theta: f64) -> Stencil {
        let n = self.spec.ntheta;
        let f = snap(wrap_angle(theta) / self.ht);
        let fl = f.floor();
        let i0 = (fl as usize) % n;
        Stencil { i0, i1: (i0 + 1) % n, w: f - fl }
    }

    /// Trilinear combination of `field(node_index)`; theta first, then y, then x.
    #[inline]
    fn interpolate(&self, sx: Stencil, sy: Stencil, st: Stencil, field: impl Fn(usize) -> f64) -> f64 {
        let along_theta = |i, j| lerp(field(self.node_index(i, j, st.i0)), field(self.node_index(i, j, st.i1)), st.w);
        let along_y = |i| lerp(along_theta(i, sy.i0), along_theta(i, sy.i1), sy.w);
        lerp(along_y(sx.i0), along_y(sx.i1), sx.w)
    }
}

/// The one-sweep Bellman operator for a fixed world, grid and dynamics.
#[derive(Debug, Clone)]
pub struct SafetyBellman {
    grid: Grid,
    gamma: f64,
    dyn_: DynamicsConfig,
    /// `l` per `(i, j)`.
    margins: Vec<f64>,
    /// Successor stencils: x per `(i, k)`, y per `(j, k)`, theta per `(k, a)`.
    succ_x: Vec<Stencil>,
    succ_y: Vec<Stencil>,
    succ_t: Vec<Stencil>,
}

impl SafetyBellman {
    pub fn new(world: &WorldConfig, spec: GridSpec, dyn_: DynamicsConfig, gamma: f64) -> Result<Self> {
        world.validate()?;
        dyn_.validate()?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        let grid = Grid::new(spec, world.bounds)?;
        let GridSpec { nx, ny, ntheta } = spec;

        let mut margins = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                margins.push(margin_at(grid.node_x(i), grid.node_y(j), world));
            }
        }
        let mut succ_x = Vec::with_capacity(nx * ntheta);
        for i in 0..nx {
            for k in 0..ntheta {
                succ_x.push(grid.stencil_x(grid.node_x(i) + dyn_.v * grid.node_theta(k).cos()));
            }
        }
        let mut succ_y = Vec::with_capacity(ny * ntheta);
        for j in 0..ny {
            for k in 0..ntheta {
                succ_y.push(grid.stencil_y(grid.node_y(j) + dyn_.v * grid.node_theta(k).sin()));
            }
        }
        let mut succ_t = Vec::with_capacity(ntheta * N_ACTIONS);
        for k in 0..ntheta {
            for a in Action::ALL {
                succ_t.push(grid.stencil_theta(wrap_angle(grid.node_theta(k) + a.omega(&dyn_))));
            }
        }
        Ok(Self { grid, gamma, dyn_, margins, succ_x, succ_y, succ_t })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.grid.spec.node_count() * N_ACTIONS
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Q_0(y, u) = l(y)`.
    pub fn initial(&self) -> Vec<f64> {
        let nt = self.grid.spec.ntheta;
        self.margins.iter().flat_map(|&l| std::iter::repeat_n(l, nt * N_ACTIONS)).collect()
    }

    /// Writes one synchronous backup of `q` into `out` and returns
    /// `max |out - q|`.
    pub fn apply(&self, q: &[f64], out: &mut [f64]) -> f64 {
        assert_eq!(q.len(), self.len(), "q-table size does not match the grid");
        assert_eq!(out.len(), self.len(), "output size does not match the grid");
        let GridSpec { ny, ntheta, .. } = self.grid.spec;
        let slab = ny * ntheta * N_ACTIONS;

        out.par_chunks_mut(slab)
            .zip(q.par_chunks(slab))
            .enumerate()
            .map(|(i, (out_slab, q_slab))| {
                let mut diff = 0.0f64;
                for j in 0..ny {
                    let l = self.margins[i * ny + j];
                    for k in 0..ntheta {
                        let sx = self.succ_x[i * ntheta + k];
                        let sy = self.succ_y[j * ntheta + k];
                        for a in 0..N_ACTIONS {
                            let st = self.succ_t[k * N_ACTIONS + a];
                            // same evaluation as `QTable::v_value`: interpolate each action, then max
                            let v_next = (0..N_ACTIONS)
                                .map(|b| self.grid.interpolate(sx, sy, st, |n| q[n * N_ACTIONS + b]))
                                .fold(f64::NEG_INFINITY, f64::max);
                            let idx = (j * ntheta + k) * N_ACTIONS + a;
                            let target = safety_target(l, v_next, self.gamma);
                            diff = diff.max((target - q_slab[idx]).abs());
                            out_slab[idx] = target;
                        }
                    }
                }
                diff
            })
            .reduce(|| 0.0, f64::max)
    }

    fn into_table(self, values: Vec<f64>) -> QTable {
        QTable { grid: self.grid, gamma: self.gamma, dyn_: self.dyn_, values }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Sup-norm change of the final sweep; the returned table's Bellman
    /// residual is at most `γ` times this.
    pub residual: f64,
}

/// Value iteration from `Q_0 = l` until a sweep changes the table by at most
/// `tol` in the sup norm.
pub fn solve_safety_bellman(
    world: &WorldConfig,
    grid: GridSpec,
    dyn_: DynamicsConfig,
    gamma: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(QTable, SolveReport)> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Config(format!("solver tolerance must be positive, got {tol}")));
    }
    let op = SafetyBellman::new(world, grid, dyn_, gamma)?;
    let mut q = op.initial();
    let mut next = vec![0.0; q.len()];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        residual = op.apply(&q, &mut next);
        std::mem::swap(&mut q, &mut next);
        if residual <= tol {
            return Ok((op.into_table(q), SolveReport { iterations: it, residual }));
        }
    }
    Err(Error::NonConvergence { iterations: max_iters, residual })
}

/// A solved (or loaded) Q-table with continuous evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    grid: Grid,
    gamma: f64,
    dyn_: DynamicsConfig,
    /// Row-major over `(ix, iy, itheta, action)`.
    values: Vec<f64>,
}

impl QTable {
    pub fn from_values(
        spec: GridSpec,
        bounds: Rect,
        gamma: f64,
        dyn_: DynamicsConfig,
        values: Vec<f64>,
    ) -> Result<Self> {
        let grid = Grid::new(spec, bounds)?;
        if values.len() != spec.node_count() * N_ACTIONS {
            return Err(Error::Format(format!(
                "expected {} values, got {}",
                spec.node_count() * N_ACTIONS,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite value at index {bad}")));
        }
        Ok(Self { grid, gamma, dyn_, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn spec(&self) -> GridSpec {
        self.grid.spec
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dynamics(&self) -> DynamicsConfig {
        self.dyn_
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stored(&self, i: usize, j: usize, k: usize, action: Action) -> f64 {
        self.values[self.grid.node_index(i, j, k) * N_ACTIONS + action.index()]
    }

    fn stencils(&self, state: &DubinsState) -> (Stencil, Stencil, Stencil) {
        (self.grid.stencil_x(state.px), self.grid.stencil_y(state.py), self.grid.stencil_theta(state.theta))
    }

    pub fn q_value(&self, state: &DubinsState, action: Action) -> f64 {
        let (sx, sy, st) = self.stencils(state);
        let a = action.index();
        self.grid.interpolate(sx, sy, st, |n| self.values[n * N_ACTIONS + a])
    }

    /// Q for all three actions, ordered as [`Action::ALL`].
    pub fn q_values(&self, state: &DubinsState) -> [f64; 3] {
        let (sx, sy, st) = self.stencils(state);
        std::array::from_fn(|a| self.grid.interpolate(sx, sy, st, |n| self.values[n * N_ACTIONS + a]))
    }

    pub fn v_value(&self, state: &DubinsState) -> f64 {
        let [a, b, c] = self.q_values(state);
        a.max(b).max(c)
    }

    /// Argmax over actions. Ties prefer going straight, then clockwise.
    pub fn safest_action(&self, state: &DubinsState) -> Action {
        best_action(self.q_values(state))
    }

    /// `max |Q - T(Q)|` over all nodes and actions.
    pub fn bellman_residual(&self, world: &WorldConfig) -> Result<f64> {
        let op = self.operator(world)?;
        let mut out = vec![0.0; self.values.len()];
        Ok(op.apply(&self.values, &mut out))
    }

    /// The backup operator this table was (or would have been) solved with.
    pub fn operator(&self, world: &WorldConfig) -> Result<SafetyBellman> {
        if world.bounds != self.grid.bounds {
            return Err(Error::HeaderMismatch("world bounds differ from the table's grid bounds".into()));
        }
        SafetyBellman::new(world, self.grid.spec, self.dyn_, self.gamma)
    }

    /// Largest `|Q(y, u) - target(y, u)|` over `samples` pseudo-random off-grid
    /// states, with the target built from the in-distribution successor. This
    /// is the error the table makes at states it never stored.
    pub fn off_grid_residual(&self, world: &WorldConfig, samples: usize, seed: u64) -> f64 {
        let mut stream = crate::rng::SpawnStream::new(seed);
        let b = self.grid.bounds;
        let mut worst = 0.0f64;
        for n in 0..samples as u64 {
            let [ux, uy, ut] = stream.draw(n);
            let y = DubinsState::new(b.min_x + ux * (b.max_x - b.min_x), b.min_y + uy * (b.max_y - b.min_y), ut * TAU);
            let l = margin_at(y.px, y.py, world);
            let qs = self.q_values(&y);
            for a in Action::ALL {
                let next = crate::env::dubins_step(y, a, &self.dyn_, crate::env::Scenario::Id, Default::default());
                let target = safety_target(l, self.v_value(&next), self.gamma);
                worst = worst.max((qs[a.index()] - target).abs());
            }
        }
        worst
    }

    /// Errors unless this table was built for exactly this grid, bounds,
    /// discount and dynamics.
    pub fn check_matches(&self, spec: GridSpec, bounds: Rect, gamma: f64, dyn_: DynamicsConfig) -> Result<()> {
        let mut diffs = Vec::new();
        if spec != self.grid.spec {
            diffs.push(format!("grid {:?} vs table {:?}", spec, self.grid.spec));
        }
        if bounds != self.grid.bounds {
            diffs.push("world bounds".to_string());
        }
        if gamma != self.gamma {
            diffs.push(format!("gamma {} vs table {}", gamma, self.gamma));
        }
        if dyn_ != self.dyn_ {
            diffs.push(format!("dynamics {:?} vs table {:?}", dyn_, self.dyn_));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::HeaderMismatch(diffs.join("; ")))
        }
    }
}

pub(crate) fn best_action(q: [f64; 3]) -> Action {
    let mut best = Action::Straight;
    for a in [Action::Clockwise, Action::CounterClockwise] {
        if q[a.index()] > q[best.index()] {
            best = a;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Disc;
    use proptest::prelude::*;

    fn small_world() -> WorldConfig {
        WorldConfig::default()
    }

    fn synthetic_table(spec: GridSpec, f: impl Fn(usize) -> f64) -> QTable {
        let n = spec.node_count() * 3;
        QTable::from_values(spec, small_world().bounds, 0.9, DynamicsConfig::default(), (0..n).map(f).collect())
            .unwrap()
    }

    #[test]
    fn node_states_reproduce_stored_values() {
        let spec = GridSpec { nx: 11, ny: 7, ntheta: 8 };
        let t = synthetic_table(spec, |n| ((n * 7919) % 1013) as f64 / 37.0 - 9.0);
        for i in 0..spec.nx {
            for j in 0..spec.ny {
                for k in 0..spec.ntheta {
                    let s = t.grid().node_state(i, j, k);
                    for a in Action::ALL {
                        assert_eq!(t.q_value(&s, a), t.stored(i, j, k, a));
                    }
                }
            }
        }
    }

    #[test]
    fn midpoints_average_neighbours() {
        let spec = GridSpec { nx: 5, ny: 5, ntheta: 4 };
        let t = synthetic_table(spec, |n| (n as f64).sin() * 3.0);
        let g = *t.grid();
        let s = DubinsState::new((g.node_x(1) + g.node_x(2)) / 2.0, g.node_y(3), g.node_theta(2));
        let expect = (t.stored(1, 3, 2, Action::Straight) + t.stored(2, 3, 2, Action::Straight)) / 2.0;
        assert!((t.q_value(&s, Action::Straight) - expect).abs() < 1e-12);

        let h = g.theta_step();
        let s = DubinsState::new(g.node_x(2), g.node_y(1), TAU - h / 2.0);
        let expect = (t.stored(2, 1, 3, Action::Clockwise) + t.stored(2, 1, 0, Action::Clockwise)) / 2.0;
        assert!((t.q_value(&s, Action::Clockwise) - expect).abs() < 1e-12);
    }

    #[test]
    fn outside_positions_clamp_to_boundary() {
        let spec = GridSpec { nx: 5, ny: 5, ntheta: 4 };
        let t = synthetic_table(spec, |n| n as f64);
        let inside = DubinsState::new(1.0, 0.0, 0.0);
        let outside = DubinsState::new(1.3, -0.2, 0.0);
        assert_eq!(t.q_value(&outside, Action::Straight), t.q_value(&inside, Action::Straight));
    }

    #[test]
    fn v_and_argmax() {
        let spec = GridSpec { nx: 2, ny: 2, ntheta: 2 };
        let pattern = [[-1.0, 0.0, 2.0], [1.0, 1.0, 0.0], [3.0, 3.0, 3.0], [0.5, -2.0, 0.5]];
        let t = synthetic_table(spec, |n| pattern[(n / 3) % 4][n % 3]);
        let node = |k: usize| t.grid().node_state(0, k / 2, k % 2);
        assert_eq!(t.v_value(&node(0)), 2.0);
        assert_eq!(t.safest_action(&node(0)), Action::CounterClockwise);
        assert_eq!(t.safest_action(&node(1)), Action::Straight);
        assert_eq!(t.v_value(&node(2)), 3.0);
        assert_eq!(t.safest_action(&node(2)), Action::Straight);
        assert_eq!(t.safest_action(&node(3)), Action::Clockwise);
    }

    #[test]
    fn v_matches_slab_max_at_every_node() {
        let spec = GridSpec { nx: 6, ny: 5, ntheta: 7 };
        let t = synthetic_table(spec, |n| ((n * 2654435761) % 10007) as f64 / 1000.0);
        for i in 0..spec.nx {
            for j in 0..spec.ny {
                for k in 0..spec.ntheta {
                    let direct = Action::ALL.iter().map(|&a| t.stored(i, j, k, a)).fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(t.v_value(&t.grid().node_state(i, j, k)), direct);
                }
            }
        }
    }

    #[test]
    fn obstacle_free_world_is_already_a_fixed_point() {
        let mut world = small_world();
        world.obstacles.clear();
        let op =
            SafetyBellman::new(&world, GridSpec { nx: 9, ny: 9, ntheta: 8 }, DynamicsConfig::default(), 0.98).unwrap();
        let q0 = op.initial();
        let mut out = vec![0.0; q0.len()];
        assert!(op.apply(&q0, &mut out) < 1e-15);
        let (t, _) = solve_safety_bellman(
            &world,
            GridSpec { nx: 9, ny: 9, ntheta: 8 },
            DynamicsConfig::default(),
            0.98,
            1e-9,
            100,
        )
        .unwrap();
        assert!(t.values().iter().all(|&v| (v - world.margin_cap).abs() < 1e-12));
    }

    #[test]
    fn converged_values_bounded_by_margin() {
        let world = small_world();
        let spec = GridSpec { nx: 21, ny: 21, ntheta: 16 };
        let tol = 1e-8;
        let gamma = 0.9;
        let (t, report) = solve_safety_bellman(&world, spec, DynamicsConfig::default(), gamma, tol, 10_000).unwrap();
        assert!(report.residual <= tol);
        assert!(t.bellman_residual(&world).unwrap() <= tol);
        let g = *t.grid();
        let mut inside = 0;
        for i in 0..spec.nx {
            for j in 0..spec.ny {
                let l = margin_at(g.node_x(i), g.node_y(j), &world);
                for k in 0..spec.ntheta {
                    let v = t.v_value(&g.node_state(i, j, k));
                    assert!(v <= l + tol / (1.0 - gamma));
                    if l < 0.0 {
                        inside += 1;
                        assert!(v < 0.0);
                    }
                }
            }
        }
        assert!(inside > 0);
    }

    #[test]
    fn perturbing_an_entry_moves_residual_boundedly() {
        let world = small_world();
        let spec = GridSpec { nx: 9, ny: 9, ntheta: 8 };
        let (t, _) = solve_safety_bellman(&world, spec, DynamicsConfig::default(), 0.9, 1e-10, 10_000).unwrap();
        let r0 = t.bellman_residual(&world).unwrap();
        let delta = 0.01;
        let mut values = t.values().to_vec();
        values[123] += delta;
        let t2 = QTable::from_values(spec, world.bounds, 0.9, DynamicsConfig::default(), values).unwrap();
        let r1 = t2.bellman_residual(&world).unwrap();
        assert!((r1 - r0).abs() <= delta * (1.0 + 0.9) + 1e-15);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let err = solve_safety_bellman(
            &small_world(),
            GridSpec { nx: 9, ny: 9, ntheta: 8 },
            DynamicsConfig::default(),
            0.98,
            1e-12,
            3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iterations: 3, .. }));
    }

    #[test]
    fn rejects_bad_parameters() {
        let w = small_world();
        assert!(SafetyBellman::new(&w, GridSpec { nx: 1, ny: 5, ntheta: 4 }, DynamicsConfig::default(), 0.9).is_err());
        assert!(SafetyBellman::new(&w, GridSpec { nx: 5, ny: 5, ntheta: 4 }, DynamicsConfig::default(), 1.0).is_err());
        assert!(solve_safety_bellman(
            &w,
            GridSpec { nx: 5, ny: 5, ntheta: 4 },
            DynamicsConfig::default(),
            0.9,
            0.0,
            10
        )
        .is_err());
    }

    #[test]
    fn solver_is_deterministic() {
        let w = small_world();
        let spec = GridSpec { nx: 13, ny: 11, ntheta: 8 };
        let a = solve_safety_bellman(&w, spec, DynamicsConfig::default(), 0.95, 1e-8, 10_000).unwrap().0;
        let b = solve_safety_bellman(&w, spec, DynamicsConfig::default(), 0.95, 1e-8, 10_000).unwrap().0;
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn check_matches_reports_differences() {
        let spec = GridSpec { nx: 3, ny: 3, ntheta: 3 };
        let t = synthetic_table(spec, |_| 0.0);
        assert!(t.check_matches(spec, small_world().bounds, 0.9, DynamicsConfig::default()).is_ok());
        assert!(matches!(
            t.check_matches(spec, small_world().bounds, 0.98, DynamicsConfig::default()),
            Err(Error::HeaderMismatch(_))
        ));
    }

    fn random_table(seed: u64, len: usize) -> Vec<f64> {
        let mut s = crate::rng::SpawnStream::new(seed);
        (0..len as u64).map(|n| s.draw(n)[0] * 2.0 - 1.0).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn backup_is_a_contraction(seed in 0u64..1000) {
            let mut world = small_world();
            world.obstacles.push(Disc { x: 0.8, y: 0.2, radius: 0.05 });
            let op = SafetyBellman::new(&world, GridSpec { nx: 9, ny: 8, ntheta: 6 }, DynamicsConfig::default(), 0.9).unwrap();
            let q1 = random_table(seed, op.len());
            let q2 = random_table(seed + 7777, op.len());
            let (mut t1, mut t2) = (vec![0.0; op.len()], vec![0.0; op.len()]);
            op.apply(&q1, &mut t1);
            op.apply(&q2, &mut t2);
            let before = q1.iter().zip(&q2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let after = t1.iter().zip(&t2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(after <= 0.9 * before + 1e-12);
        }

        #[test]
        fn backup_is_monotone(seed in 0u64..1000, bump in 0.0..0.5f64) {
            let op = SafetyBellman::new(&small_world(), GridSpec { nx: 7, ny: 7, ntheta: 5 }, DynamicsConfig::default(), 0.9).unwrap();
            let q1 = random_table(seed, op.len());
            let extra = random_table(seed + 1, op.len());
            let q2: Vec<f64> = q1.iter().zip(&extra).map(|(a, e)| a + bump * (e + 1.0)).collect();
            let (mut t1, mut t2) = (vec![0.0; op.len()], vec![0.0; op.len()]);
            op.apply(&q1, &mut t1);
            op.apply(&q2, &mut t2);
            prop_assert!(t1.iter().zip(&t2).all(|(a, b)| a <= b));
        }

        #[test]
        fn interpolation_is_continuous_across_faces(
            i in 0usize..4, j in 0.0..4.0f64, k in 0.0..6.0f64, a in 0usize..3,
        ) {
            let spec = GridSpec { nx: 5, ny: 5, ntheta: 6 };
            let t = synthetic_table(spec, |n| ((n * 37) % 101) as f64 / 10.0);
            let g = *t.grid();
            let face = g.node_x(i + 1);
            let y = g.bounds.min_y + j * (g.bounds.max_y - g.bounds.min_y) / 4.0;
            let th = k * g.theta_step();
            let act = Action::ALL[a];
            let at = t.q_value(&DubinsState::new(face, y, th), act);
            let left = t.q_value(&DubinsState::new(face - 1e-12, y, th), act);
            let right = t.q_value(&DubinsState::new(face + 1e-12, y, th), act);
            prop_assert!((at - left).abs() < 1e-9 && (at - right).abs() < 1e-9);
        }

        #[test]
        fn safest_action_attains_v(x in 0.0..1.0f64, y in 0.0..1.0f64, th in 0.0..TAU) {
            let spec = GridSpec { nx: 6, ny: 6, ntheta: 5 };
            let t = synthetic_table(spec, |n| ((n * 7919) % 97) as f64);
            let s = DubinsState::new(x, y, th);
            prop_assert_eq!(t.q_value(&s, t.safest_action(&s)), t.v_value(&s));
        }
    }
}
