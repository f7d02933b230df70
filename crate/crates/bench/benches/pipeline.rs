use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use porecov_bench::{spread_agents, three_hole_config};
use porecov_core::partition::{build_safe_bars, partition_step, sector_workload, PartitionState};
use porecov_core::sim::{build_scenario_mapping, Scenario};

fn mapping(c: &mut Criterion) {
    let config = three_hole_config();
    let mut g = c.benchmark_group("mapping");
    g.sample_size(10);
    g.bench_function("three_hole", |b| b.iter(|| build_scenario_mapping(black_box(&config)).unwrap()));
    g.finish();
}

fn control(c: &mut Criterion) {
    let sc = Scenario::build(three_hole_config()).unwrap();
    let model = sc.model();
    let (phases, agents) = spread_agents(&sc, 6);
    let sectors = model.sector_faces(&phases);
    c.bench_function("agent_fields", |b| b.iter(|| model.agent_fields(black_box(&agents))));
    c.bench_function("coverage_cost", |b| b.iter(|| model.coverage_cost(black_box(&agents), &phases)));
    c.bench_function("gradient", |b| b.iter(|| model.riemannian_gradient(black_box(&agents), 0, &sectors[0]).unwrap()));
}

fn partition(c: &mut Criterion) {
    let sc = Scenario::build(three_hole_config()).unwrap();
    let state = PartitionState::uniform(6, 0.2, 0.005).unwrap();
    let m: Vec<f64> = (0..6).map(|i| sector_workload(&state, i, &sc.table)).collect();
    c.bench_function("partition_step", |b| b.iter(|| partition_step(black_box(&state), &m, 0.3, Some(0))));
    c.bench_function("safe_bars", |b| b.iter(|| build_safe_bars(black_box(&state), &sc.mapped.obstacles).unwrap()));
}

criterion_group!(benches, mapping, control, partition);
criterion_main!(benches);
