use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nsd_core::constraints_domain::{collision_constraint, AgentTrajectoryBundle};
use nsd_core::projections::{alm_project, project_halfspace, AlmConfig, BoxConstraint, Cost, LinearConstraint};
use nsd_core::{ConstraintSet, SeededRng};

fn closed_form_vs_alm(c: &mut Criterion) {
    let mut g = c.benchmark_group("halfspace");
    for dim in [2usize, 16, 128] {
        let mut rng = SeededRng::new(dim as u64);
        let a = rng.normal_vec(dim);
        let x: Vec<f64> = rng.normal_vec(dim).into_iter().map(|v| 3.0 * v).collect();
        let cs = ConstraintSet::new().with(LinearConstraint::new(a.clone(), -1.0).unwrap());
        let cfg = AlmConfig::default();
        g.bench_with_input(BenchmarkId::new("closed_form", dim), &dim, |b, _| {
            b.iter(|| project_halfspace(black_box(&x), &a, -1.0).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("alm", dim), &dim, |b, _| {
            b.iter(|| alm_project(black_box(&x), &cs, &Cost::SquaredEuclidean, &cfg, None).unwrap())
        });
    }
    g.finish();
}

fn box_and_halfspace(c: &mut Criterion) {
    let mut rng = SeededRng::new(3);
    let x: Vec<f64> = rng.normal_vec(8).into_iter().map(|v| 2.0 * v).collect();
    let cs = ConstraintSet::new()
        .with(BoxConstraint::uniform(8, -1.0, 1.0).unwrap())
        .with(LinearConstraint::new(vec![1.0; 8], 0.5).unwrap());
    let cfg = AlmConfig::default();
    c.bench_function("alm_box_and_halfspace_8d", |b| {
        b.iter(|| alm_project(black_box(&x), &cs, &Cost::SquaredEuclidean, &cfg, None).unwrap())
    });
}

fn kl_halfspace(c: &mut Criterion) {
    let x = [0.5, 0.2, 0.1, 0.1, 0.1];
    let cs = ConstraintSet::new().with(LinearConstraint::new(vec![1.0, 0.0, 0.0, 0.0, 0.0], 0.2).unwrap());
    let cfg = AlmConfig::default();
    c.bench_function("alm_kl_cap_vocab5", |b| {
        b.iter(|| alm_project(black_box(&x), &cs, &Cost::Kl { vocab: 5, frozen: None }, &cfg, None).unwrap())
    });
}

fn collision(c: &mut Criterion) {
    // three agents crossing through the origin
    let ends = [([-2.0, 0.0], [2.0, 0.0]), ([0.0, -2.0], [0.0, 2.0]), ([-2.0, -2.0], [2.0, 2.0])];
    let bundle = AgentTrajectoryBundle::straight_lines(&ends, 12, vec![0.25; 3]).unwrap();
    let cs = ConstraintSet::new().with(collision_constraint(&bundle).unwrap());
    let cfg = AlmConfig::default();
    let mut g = c.benchmark_group("collision");
    g.sample_size(20);
    g.bench_function("alm_3_agents_12_steps", |b| {
        b.iter(|| alm_project(black_box(bundle.flat()), &cs, &Cost::SquaredEuclidean, &cfg, None))
    });
    g.finish();
}

criterion_group!(benches, closed_form_vs_alm, box_and_halfspace, kl_halfspace, collision);
criterion_main!(benches);
