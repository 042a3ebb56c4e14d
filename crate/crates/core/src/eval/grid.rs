//! The experiment grid: every (size, aug, adapter, c, k) cell repeated with
//! independently seeded episodes, run on a bounded worker pool.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{run_episode_with, sample_episode, EnrollmentCache, EpisodeEnv, ImageSource, RunKey, RunResult};
use super::manifest::{filter_train_images, DatasetManifest};
use crate::adapter::{
    build_transform_with_report, estimate_stats, TransformReport, WhitenColorTransform, DEFAULT_EPSILON,
};
use crate::backend::mock::{MockWorld, MockWorldConfig};
use crate::backend::{Backend, ModelSize};
use crate::enrollment::EnrollmentConfig;
use crate::error::{Error, Result};
use crate::inference::InferenceConfig;
use crate::seed;

pub const DEFAULT_SEED: u64 = 42;

/// How episode seeds are derived; echoed into report headers.
pub const SEED_MIX_DOC: &str = "episode_seed = splitmix64(base_seed XOR fnv1a64(le64(c) || le64(k) || le64(repeat))); \
model size, augmentation and adapter are not mixed in, so those cells see identical episodes";

pub fn episode_seed(base_seed: u64, c: usize, k: usize, repeat: usize) -> u64 {
    seed::mix(base_seed, &[c as u64, k as u64, repeat as u64])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentGrid {
    pub class_counts: Vec<usize>,
    pub shot_counts: Vec<usize>,
    pub repeats: usize,
    pub base_seed: u64,
    pub augmentations: Vec<bool>,
    pub adapters: Vec<bool>,
    pub model_sizes: Vec<ModelSize>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        Self {
            class_counts: vec![2, 4, 9, 19],
            shot_counts: vec![1, 3, 5, 10],
            repeats: 30,
            base_seed: DEFAULT_SEED,
            augmentations: vec![false, true],
            adapters: vec![false, true],
            model_sizes: ModelSize::ALL.to_vec(),
        }
    }
}

fn check_axis<T: PartialEq + std::fmt::Debug>(name: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidConfig(format!("grid axis `{name}` is empty")));
    }
    for (i, x) in v.iter().enumerate() {
        if v[..i].contains(x) {
            return Err(Error::InvalidConfig(format!("grid axis `{name}` repeats {x:?}")));
        }
    }
    Ok(())
}

/// One grid cell; the repeats of a cell share it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CellKey {
    pub size: ModelSize,
    pub aug: bool,
    pub adapter: bool,
    pub c: usize,
    pub k: usize,
}

impl ExperimentGrid {
    pub fn validate(&self, num_labels: usize) -> Result<()> {
        check_axis("class_counts", &self.class_counts)?;
        check_axis("shot_counts", &self.shot_counts)?;
        check_axis("augmentations", &self.augmentations)?;
        check_axis("adapters", &self.adapters)?;
        check_axis("model_sizes", &self.model_sizes)?;
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be >= 1".into()));
        }
        if let Some(&c) = self.class_counts.iter().find(|&&c| c == 0 || c > num_labels) {
            return Err(Error::InvalidConfig(format!(
                "class count {c} outside 1..={num_labels} (dataset classes)"
            )));
        }
        if self.shot_counts.contains(&0) {
            return Err(Error::InvalidConfig("shot counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Cells in report order: size, aug, adapter, c, k.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &size in &self.model_sizes {
            for &aug in &self.augmentations {
                for &adapter in &self.adapters {
                    for &c in &self.class_counts {
                        for &k in &self.shot_counts {
                            out.push(CellKey {
                                size,
                                aug,
                                adapter,
                                c,
                                k,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn num_episodes(&self) -> usize {
        self.cells().len() * self.repeats
    }
}

/// Backend, images and optional adapter for one model size.
pub struct SizeContext {
    pub size: ModelSize,
    pub backend: Arc<dyn Backend>,
    pub images: Arc<dyn ImageSource>,
    pub adapter: Option<Arc<WhitenColorTransform>>,
    cache: EnrollmentCache,
}

impl SizeContext {
    pub fn new(
        size: ModelSize,
        backend: Arc<dyn Backend>,
        images: Arc<dyn ImageSource>,
        adapter: Option<Arc<WhitenColorTransform>>,
    ) -> Self {
        Self {
            size,
            backend,
            images,
            adapter,
            cache: EnrollmentCache::new(),
        }
    }
}

pub const MOCK_CORPUS_SIZE: usize = 2048;

/// Adapter for a mock world: image statistics from renders, text
/// statistics from perturbed class latents.
pub fn mock_adapter(world: &MockWorld, corpus_seed: u64) -> Result<(WhitenColorTransform, TransformReport)> {
    let dim = world.config().dim;
    let img = estimate_stats(&world.image_corpus(MOCK_CORPUS_SIZE, corpus_seed)?)?;
    let txt = estimate_stats(&world.text_corpus(MOCK_CORPUS_SIZE, 0.5 / (dim as f64).sqrt(), corpus_seed)?)?;
    build_transform_with_report(&img, &txt, DEFAULT_EPSILON)
}

/// Mock context for `size`: `base` with the size's noise preset unless
/// `keep_noise` is set.
pub fn mock_context(
    base: &MockWorldConfig,
    size: ModelSize,
    keep_noise: bool,
    with_adapter: bool,
) -> Result<SizeContext> {
    let mut cfg = base.clone();
    if !keep_noise {
        cfg.noise_sigma = MockWorldConfig::for_size(size).noise_sigma;
    }
    let world = Arc::new(MockWorld::with_size(cfg, size)?);
    let adapter = if with_adapter {
        let (t, report) = mock_adapter(&world, base.seed)?;
        log::info!(
            "mock adapter for size {size}: image eigenvalues [{:.3e}, {:.3e}], {} floored",
            report.image.min,
            report.image.max,
            report.image.floored
        );
        Some(Arc::new(t))
    } else {
        None
    };
    Ok(SizeContext::new(size, world.clone(), world, adapter))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessOptions {
    pub enrollment: EnrollmentConfig,
    pub inference: InferenceConfig,
    /// Worker threads; 0 means one per core.
    #[serde(skip)]
    pub jobs: usize,
    /// Drop cluttered and blind-captured training images first.
    pub filter_train: bool,
    /// Silhouette of the enrolled vectors for repeat 0 of each cell.
    pub silhouette: bool,
    /// Keep per-run wall times (reports stop being byte-stable).
    pub record_wall_time: bool,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            enrollment: EnrollmentConfig {
                full_image_fallback: true,
                ..EnrollmentConfig::default()
            },
            inference: InferenceConfig::default(),
            jobs: 0,
            filter_train: true,
            silhouette: true,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub size: ModelSize,
    pub c: usize,
    pub k: usize,
    pub aug: bool,
    pub adapter: bool,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub no_detection_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub silhouette: Option<f64>,
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Debug)]
pub struct GridOutcome {
    pub runs: Vec<RunResult>,
    pub cells: Vec<CellSummary>,
    /// First failure in grid order; `runs` then holds every run that
    /// succeeded.
    pub error: Option<Error>,
}

/// Summaries of the cells whose repeats all completed.
pub fn summarize(grid: &ExperimentGrid, runs: &[RunResult]) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for cell in grid.cells() {
        let mine: Vec<&RunResult> = runs
            .iter()
            .filter(|r| {
                r.size == cell.size && r.aug == cell.aug && r.adapter == cell.adapter && r.c == cell.c && r.k == cell.k
            })
            .collect();
        if mine.len() != grid.repeats {
            continue;
        }
        let acc: Vec<f64> = mine.iter().map(|r| r.accuracy).collect();
        let (mean, std) = mean_std(&acc);
        let ndr = mine.iter().map(|r| r.no_detection_rate).sum::<f64>() / mine.len() as f64;
        out.push(CellSummary {
            size: cell.size,
            c: cell.c,
            k: cell.k,
            aug: cell.aug,
            adapter: cell.adapter,
            mean,
            std,
            n: mine.len(),
            no_detection_rate: ndr,
            silhouette: mine.iter().find(|r| r.repeat == 0).and_then(|r| r.silhouette),
        });
    }
    out
}

pub fn run_grid(
    grid: &ExperimentGrid,
    manifest: &DatasetManifest,
    contexts: &[SizeContext],
    opts: &HarnessOptions,
) -> Result<GridOutcome> {
    manifest.validate()?;
    grid.validate(manifest.num_labels())?;
    opts.enrollment.validate()?;
    opts.inference.validate()?;
    let manifest = if opts.filter_train {
        filter_train_images(manifest)?
    } else {
        manifest.clone()
    };
    for &size in &grid.model_sizes {
        let ctx = contexts
            .iter()
            .find(|c| c.size == size)
            .ok_or_else(|| Error::InvalidConfig(format!("no backend configured for model size {size}")))?;
        if grid.adapters.contains(&true) && ctx.adapter.is_none() {
            return Err(Error::InvalidConfig(format!(
                "grid enables the adapter but size {size} has no transform"
            )));
        }
    }

    let units: Vec<(CellKey, usize)> = grid
        .cells()
        .into_iter()
        .flat_map(|cell| (0..grid.repeats).map(move |r| (cell, r)))
        .collect();
    let run_unit = |&(cell, repeat): &(CellKey, usize)| -> Result<RunResult> {
        let ctx = contexts.iter().find(|c| c.size == cell.size).expect("checked above");
        let enrollment = EnrollmentConfig {
            use_augmentations: cell.aug,
            adapter_enabled: cell.adapter,
            ..opts.enrollment.clone()
        };
        let env = EpisodeEnv {
            backend: ctx.backend.as_ref(),
            images: ctx.images.as_ref(),
            enrollment: &enrollment,
            inference: &opts.inference,
            adapter: ctx.adapter.as_deref(),
            cache: Some(&ctx.cache),
        };
        let episode = sample_episode(
            &manifest,
            cell.c,
            cell.k,
            episode_seed(grid.base_seed, cell.c, cell.k, repeat),
        )?;
        let key = RunKey {
            size: cell.size,
            aug: cell.aug,
            adapter: cell.adapter,
            repeat,
        };
        let mut r = run_episode_with(&episode, &env, key, opts.silhouette && repeat == 0)?;
        if !opts.record_wall_time {
            r.wall_time_ms = None;
        }
        Ok(r)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<RunResult>> = pool.install(|| units.par_iter().map(run_unit).collect());

    let mut runs = Vec::with_capacity(results.len());
    let mut error = None;
    for r in results {
        match r {
            Ok(r) => runs.push(r),
            Err(e) => {
                if error.is_none() {
                    error = Some(e);
                }
            }
        }
    }
    let cells = summarize(grid, &runs);
    Ok(GridOutcome { runs, cells, error })
}
