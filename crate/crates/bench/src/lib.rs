//! Fixtures shared by the benchmarks: a mid-sized grid and its solved table.

use acofi_core::bellman::solve_safety_bellman;
use acofi_core::{ExperimentConfig, GridSpec, QTable};

/// Default world and dynamics on a coarser grid so a solve takes well under a
/// second.
pub fn bench_config() -> ExperimentConfig {
    ExperimentConfig { grid: GridSpec { nx: 41, ny: 41, ntheta: 32 }, ..Default::default() }
}

pub fn solved_table(cfg: &ExperimentConfig) -> QTable {
    let s = &cfg.solver;
    solve_safety_bellman(&cfg.world, cfg.grid, cfg.dynamics, s.gamma, s.tol, s.max_iters)
        .expect("bench grid converges")
        .0
}
