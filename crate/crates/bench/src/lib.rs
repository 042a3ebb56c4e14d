//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdid_core::backend::mock::MockWorldConfig;
use tdid_core::eval::grid::{mock_context, ExperimentGrid, HarnessOptions, SizeContext};
use tdid_core::{BBox, Detection, EmbeddingBatch, ModelSize};

/// `n` boxes clustered on a 640x480 frame so that NMS has overlaps to remove.
pub fn detections(n: usize, seed: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let cx = rng.random_range(0..8) as f64 * 80.0 + rng.random_range(-10.0..10.0);
            let cy = rng.random_range(0..6) as f64 * 80.0 + rng.random_range(-10.0..10.0);
            let (w, h) = (rng.random_range(20.0..120.0), rng.random_range(20.0..120.0));
            let b = BBox::new(cx, cy, cx + w, cy + h).expect("positive extent");
            Detection::new(b, rng.random_range(0..19), rng.random()).expect("score in range")
        })
        .collect()
}

/// `m` raw vectors of dimension `dim`.
pub fn raw_vectors(m: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn batch(rows: usize, dim: usize, seed: u64) -> EmbeddingBatch {
    EmbeddingBatch::from_rows(dim, &raw_vectors(rows, dim, seed)).expect("finite rows")
}

/// One-cell grid of a single episode on the default mock world.
pub fn single_episode(c: usize, k: usize, aug: bool, adapter: bool) -> (ExperimentGrid, SizeContext, HarnessOptions) {
    let grid = ExperimentGrid {
        class_counts: vec![c],
        shot_counts: vec![k],
        repeats: 1,
        augmentations: vec![aug],
        adapters: vec![adapter],
        model_sizes: vec![ModelSize::M],
        ..ExperimentGrid::default()
    };
    let ctx = mock_context(&MockWorldConfig::default(), ModelSize::M, false, adapter).expect("mock context");
    let opts = HarnessOptions {
        jobs: 1,
        silhouette: false,
        ..HarnessOptions::default()
    };
    (grid, ctx, opts)
}
