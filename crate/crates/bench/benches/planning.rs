use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use irplan_core::analysis::{induced_chain, lemma1_check, solve_time_to_go};
use irplan_core::model::{build_synthetic, SyntheticConfig};
use irplan_core::verify::blank_incident;
use irplan_core::{plan, PlannerConfig};

fn config(n_actions: usize) -> SyntheticConfig {
    SyntheticConfig {
        n_actions,
        kernel_mixing_lambda: 0.05,
        seed: 3,
        ..Default::default()
    }
}

fn build(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_synthetic");
    for n in [4, 16, 64] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| build_synthetic(black_box(&config(n))).unwrap())
        });
    }
    group.finish();
}

fn solve(c: &mut Criterion) {
    let model = build_synthetic(&config(16)).unwrap();
    let chain = induced_chain(&model.model_kernels, &model.proposal).unwrap();
    c.bench_function("solve_time_to_go", |b| b.iter(|| solve_time_to_go(black_box(&chain)).unwrap()));
    c.bench_function("value_bound_check", |b| b.iter(|| lemma1_check(black_box(&model)).unwrap()));
}

fn planning(c: &mut Criterion) {
    let model = build_synthetic(&config(16)).unwrap();
    let incident = blank_incident();
    let mut group = c.benchmark_group("plan");
    group.sample_size(20);
    for (name, exact) in [("rollout", false), ("exact", true)] {
        for n in [1, 3, 5] {
            let cfg = PlannerConfig {
                n_candidates: n,
                exact_expectation: exact,
                max_parallel: 1,
                ..Default::default()
            };
            group.bench_with_input(BenchmarkId::new(name, n), &cfg, |b, cfg| {
                b.iter(|| plan(&model, &incident, cfg.clone()).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, build, solve, planning);
criterion_main!(benches);
