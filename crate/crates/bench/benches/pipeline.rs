use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use tdid_bench::{batch, detections, raw_vectors, single_episode};
use tdid_core::adapter::{apply_transform, build_transform, estimate_stats};
use tdid_core::eval::grid::run_grid;
use tdid_core::eval::manifest::mock_manifest;
use tdid_core::{aggregate_prototype, nms};

fn bench_nms(c: &mut Criterion) {
    let mut g = c.benchmark_group("nms");
    for n in [10, 100, 1000] {
        let dets = detections(n, 7);
        g.bench_with_input(BenchmarkId::from_parameter(n), &dets, |b, d| {
            b.iter(|| nms(black_box(d), 0.5))
        });
    }
    g.finish();
}

fn bench_aggregate(c: &mut Criterion) {
    let mut g = c.benchmark_group("aggregate");
    for m in [1, 5, 50] {
        let raw = raw_vectors(m, 512, 11);
        g.bench_with_input(BenchmarkId::from_parameter(m), &raw, |b, r| {
            b.iter(|| aggregate_prototype(black_box(r)).unwrap())
        });
    }
    g.finish();
}

fn bench_transform(c: &mut Criterion) {
    let img = estimate_stats(&batch(2000, 512, 1)).unwrap();
    let txt = estimate_stats(&batch(2000, 512, 2)).unwrap();
    c.bench_function("build_transform/512", |b| {
        b.iter(|| build_transform(&img, &txt, 1e-5).unwrap())
    });
    let t = build_transform(&img, &txt, 1e-5).unwrap();
    let queries = batch(64, 512, 3);
    c.bench_function("apply_transform/64x512", |b| {
        b.iter(|| apply_transform(&t, black_box(&queries)).unwrap())
    });
}

fn bench_episode(c: &mut Criterion) {
    let manifest = mock_manifest(19, 24, 12);
    let mut g = c.benchmark_group("mock_episode");
    g.sample_size(10);
    for (name, aug, adapter) in [("c9k5", false, false), ("c9k5_aug_adapter", true, true)] {
        let (grid, ctx, opts) = single_episode(9, 5, aug, adapter);
        // The context is reused, so after the first iteration enrollment is
        // served from its cache, as it is inside a full grid.
        let ctx = [ctx];
        g.bench_function(name, |b| b.iter(|| run_grid(&grid, &manifest, &ctx, &opts).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench_nms, bench_aggregate, bench_transform, bench_episode);
criterion_main!(benches);
