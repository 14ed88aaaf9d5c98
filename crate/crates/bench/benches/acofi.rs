use std::hint::black_box;

use acofi_bench::{bench_config, solved_table};
use acofi_core::bellman::SafetyBellman;
use acofi_core::conformal::{quantile, AciState};
use acofi_core::harness::{run_episode, verify_theorems};
use acofi_core::{Action, DubinsState, PolicyKind, Scenario};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn bellman(c: &mut Criterion) {
    let cfg = bench_config();
    let op = SafetyBellman::new(&cfg.world, cfg.grid, cfg.dynamics, cfg.solver.gamma).unwrap();
    let q = op.initial();
    let mut out = vec![0.0; q.len()];
    c.bench_function("bellman_sweep_41x41x32", |b| b.iter(|| op.apply(black_box(&q), &mut out)));

    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    g.bench_function("solve_41x41x32", |b| b.iter(|| solved_table(black_box(&cfg))));
    g.finish();
}

fn interpolation(c: &mut Criterion) {
    let cfg = bench_config();
    let table = solved_table(&cfg);
    let states: Vec<DubinsState> =
        (0..256).map(|i| DubinsState::new(0.003 * i as f64 + 0.1, 0.9 - 0.003 * i as f64, 0.05 * i as f64)).collect();
    c.bench_function("q_value_x256", |b| {
        b.iter(|| states.iter().map(|s| table.q_value(black_box(s), Action::Straight)).sum::<f64>())
    });
    c.bench_function("safest_action_x256", |b| {
        b.iter(|| states.iter().map(|s| table.safest_action(black_box(s)).index()).sum::<usize>())
    });
}

fn conformal(c: &mut Criterion) {
    let scores: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3).collect();
    c.bench_function("aci_update_1000_steps", |b| {
        b.iter_batched(
            || AciState::new(0.2, 0.05, 0.2),
            |mut aci| {
                for &s in &scores {
                    aci.record_and_update(black_box(s), 0.0);
                }
                aci
            },
            BatchSize::SmallInput,
        )
    });
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    c.bench_function("quantile_n1000", |b| b.iter(|| quantile(black_box(&sorted), black_box(0.8))));
}

fn episodes(c: &mut Criterion) {
    let cfg = bench_config();
    let table = solved_table(&cfg);
    for p in PolicyKind::ALL {
        c.bench_function(&format!("episode_{p}_varspeedsteer"), |b| {
            b.iter(|| run_episode(p, Scenario::VarSpeedAndSteer, black_box(3), &cfg, &table).unwrap())
        });
    }
    let ep = run_episode(PolicyKind::Acofi, Scenario::VarSpeedAndSteer, 3, &cfg, &table).unwrap();
    let filter = cfg.filter_config();
    c.bench_function("verify_theorems_episode", |b| b.iter(|| verify_theorems(black_box(&ep.trace), &filter).unwrap()));
}

criterion_group!(benches, bellman, interpolation, conformal, episodes);
criterion_main!(benches);
