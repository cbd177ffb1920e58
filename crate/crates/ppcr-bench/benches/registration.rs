//! Hot-path benchmarks: index construction and queries, weight
//! evaluation, one inner solve, and a complete registration.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ppcr::geometry::dist2;
use ppcr::optimizer::solve;
use ppcr::{
    gaussian_weights, register, t_weights, LmConfig, RegistrationConfig, RigidTransform,
    SpatialIndex, WeightModel, WeightedProblem,
};
use ppcr_bench::{rotated_pair, uniform_cloud};
use std::hint::black_box;

fn bench_spatial_index(c: &mut Criterion) {
    let cloud = uniform_cloud(10_000, 1);
    let queries = uniform_cloud(1000, 2);

    c.bench_function("index_build_10k", |b| {
        b.iter(|| SpatialIndex::build(black_box(&cloud.points)).unwrap())
    });

    let index = SpatialIndex::build(&cloud.points).unwrap();
    c.bench_function("index_query_k10_1000x", |b| {
        b.iter(|| {
            for q in queries.iter() {
                black_box(index.k_nearest_within(black_box(q), 10, 0.5));
            }
        })
    });
}

fn bench_weights(c: &mut Criterion) {
    let residuals: Vec<f64> = (0..10).map(|i| 0.3 * i as f64).collect();
    c.bench_function("gaussian_weights_10", |b| {
        b.iter(|| gaussian_weights(black_box(&residuals)))
    });
    c.bench_function("t_weights_10", |b| {
        b.iter(|| t_weights(black_box(&residuals), black_box(5.0)))
    });
}

fn bench_inner_solve(c: &mut Criterion) {
    let (source, target, _) = rotated_pair(1000, 3);
    let index = SpatialIndex::build(&target.points).unwrap();
    let associations: Vec<Vec<(usize, f64)>> = source
        .iter()
        .map(|p| index.k_nearest_within(p, 10, 0.5))
        .collect();
    let problem = WeightedProblem::new(
        &source,
        &target,
        &associations,
        WeightModel::TDistribution { nu: 5.0 },
    )
    .unwrap();

    c.bench_function("inner_solve_1k_k10", |b| {
        b.iter_batched(
            || problem.clone(),
            |mut p| solve(&mut p, &LmConfig::default()),
            BatchSize::SmallInput,
        )
    });
}

fn bench_cost_residuals(c: &mut Criterion) {
    let (source, target, _) = rotated_pair(1000, 4);
    c.bench_function("associate_1k_k10", |b| {
        let index = SpatialIndex::build(&target.points).unwrap();
        b.iter(|| {
            let lists: Vec<Vec<(usize, f64)>> = source
                .iter()
                .map(|p| index.k_nearest_within(black_box(p), 10, 0.5))
                .collect();
            black_box(lists)
        })
    });
    c.bench_function("dist2_pairwise_1k", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for (p, q) in source.iter().zip(target.iter()) {
                acc += dist2(black_box(p), black_box(q));
            }
            black_box(acc)
        })
    });
}

fn bench_full_register(c: &mut Criterion) {
    let (source, target, _) = rotated_pair(1000, 5);
    let config = RegistrationConfig::for_target(&target).unwrap();
    let mut group = c.benchmark_group("register");
    group.sample_size(10);
    group.bench_function("register_1k_default_stop", |b| {
        b.iter(|| {
            register(
                black_box(&source),
                black_box(&target),
                &RigidTransform::identity(),
                &config,
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_spatial_index,
    bench_weights,
    bench_inner_solve,
    bench_cost_residuals,
    bench_full_register
);
criterion_main!(benches);
