use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use etrmpc_core::config::ExperimentConfig;
use etrmpc_core::{build_schedule, run_closed_loop, solve_rmpc, BoxMethod, DVector, DisturbanceKind, DisturbanceModel, Method};
use std::hint::black_box;

fn setup(c: &mut Criterion) {
    let cfg = ExperimentConfig::batch_reactor();
    c.bench_function("setup/batch_reactor", |b| b.iter(|| cfg.setup().unwrap()));
}

fn rmpc(c: &mut Criterion) {
    let cfg = ExperimentConfig::batch_reactor();
    let s = cfg.setup().unwrap();
    let x0 = cfg.x0();
    c.bench_function("rmpc/solve_x0", |b| b.iter(|| solve_rmpc(&s, black_box(&x0)).unwrap()));
}

fn boxes(c: &mut Criterion) {
    let s = ExperimentConfig::batch_reactor().setup().unwrap();
    let sol = solve_rmpc(&s, &DVector::from_vec(vec![0.3, 0.2, -0.1, 0.25])).unwrap();
    let mut g = c.benchmark_group("schedule");
    for m in BoxMethod::ALL {
        g.bench_function(format!("{m:?}"), |b| b.iter(|| build_schedule(&s, &sol, m).unwrap()));
    }
    g.finish();
}

fn closed_loop(c: &mut Criterion) {
    let cfg = ExperimentConfig::batch_reactor();
    let s = cfg.setup().unwrap();
    let x0 = cfg.x0();
    let d = DisturbanceModel { kind: DisturbanceKind::UniformBox { seed: 2024 }, impulses: vec![] };
    let mut g = c.benchmark_group("closed_loop_60");
    g.sample_size(10);
    for m in [Method::Cp1, Method::Lp2, Method::Periodic] {
        g.bench_function(m.name(), |b| {
            b.iter_batched(|| x0.clone(), |x| run_closed_loop(&s, &x, m, &d, 60).unwrap(), BatchSize::SmallInput)
        });
    }
    g.finish();
}

criterion_group!(benches, setup, rmpc, boxes, closed_loop);
criterion_main!(benches);
