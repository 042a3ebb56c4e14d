//! One c-way k-shot episode: sample, enroll, classify.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::manifest::{parse_mock_path, DatasetManifest, ImageRecord};
use super::metrics::silhouette;
use crate::adapter::WhitenColorTransform;
use crate::augment::Image;
use crate::backend::mock::MockWorld;
use crate::backend::{Backend, ModelSize};
use crate::embedding::EmbeddingBatch;
use crate::enrollment::{
    encode_image_examples, Clock, EnrollmentConfig, ImageExamples, ObjectPrototype, PrototypeStore,
};
use crate::error::{Error, Result};
use crate::inference::{classify_query, InferenceConfig};
use crate::seed;

/// Resolves manifest paths to images.
pub trait ImageSource: Send + Sync {
    fn load(&self, path: &str) -> Result<Image>;
}

/// Manifest paths relative to a root directory.
#[derive(Debug, Clone)]
pub struct FileSource {
    root: std::path::PathBuf,
}

impl FileSource {
    pub fn new(root: impl Into<std::path::PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl ImageSource for FileSource {
    fn load(&self, path: &str) -> Result<Image> {
        Image::open(self.root.join(path))
    }
}

impl ImageSource for MockWorld {
    fn load(&self, path: &str) -> Result<Image> {
        let (class, instance) = parse_mock_path(path)?;
        self.render(class, instance)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub seed: u64,
    pub c: usize,
    pub k: usize,
    /// Chosen labels in manifest order.
    pub labels: Vec<String>,
    /// `k` training records per chosen label, parallel to `labels`.
    pub train: Vec<Vec<ImageRecord>>,
    /// Every test record of the chosen labels with its label.
    pub test: Vec<(String, ImageRecord)>,
}

/// Draws `c` labels and `k` training images per label without replacement.
/// The manifest is expected to be filtered already.
pub fn sample_episode(manifest: &DatasetManifest, c: usize, k: usize, episode_seed: u64) -> Result<Episode> {
    if c == 0 || k == 0 {
        return Err(Error::InvalidConfig(format!(
            "episode needs c >= 1 and k >= 1, got c={c} k={k}"
        )));
    }
    let n = manifest.num_labels();
    if c > n {
        return Err(Error::InvalidConfig(format!(
            "c={c} exceeds the {n} labels in the manifest"
        )));
    }
    let mut rng = seed::rng(episode_seed);
    let mut chosen = sample(&mut rng, n, c).into_vec();
    chosen.sort_unstable();
    let mut labels = Vec::with_capacity(c);
    let mut train = Vec::with_capacity(c);
    let mut test = Vec::new();
    for i in chosen {
        let (label, o) = manifest.objects.get_index(i).expect("index below len");
        if o.train.len() < k {
            return Err(Error::InsufficientExamples {
                label: label.clone(),
                needed: k,
                available: o.train.len(),
            });
        }
        let mut picks = sample(&mut rng, o.train.len(), k).into_vec();
        picks.sort_unstable();
        train.push(picks.into_iter().map(|j| o.train[j].clone()).collect());
        test.extend(o.test.iter().map(|r| (label.clone(), r.clone())));
        labels.push(label.clone());
    }
    Ok(Episode {
        seed: episode_seed,
        c,
        k,
        labels,
        train,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryOutcome {
    pub image: String,
    pub truth: String,
    pub predicted: Option<String>,
    pub confidence: f64,
}

impl QueryOutcome {
    pub fn is_correct(&self) -> bool {
        self.predicted.as_deref() == Some(self.truth.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunResult {
    pub size: ModelSize,
    pub c: usize,
    pub k: usize,
    pub aug: bool,
    pub adapter: bool,
    pub repeat: usize,
    pub seed: u64,
    pub labels: Vec<String>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub no_detection_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silhouette: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    pub per_query: Vec<QueryOutcome>,
}

impl RunResult {
    pub fn misclassified(&self) -> usize {
        self.total - self.correct
    }
}

/// Per-image enrollment outputs keyed by (path, augmentations, adapter).
/// Enrollment of an image is a pure function of those, so episodes can
/// share the work.
#[derive(Default)]
pub struct EnrollmentCache {
    map: Mutex<HashMap<(String, bool, bool), Arc<ImageExamples>>>,
}

impl EnrollmentCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get_or_compute(
        &self,
        key: (String, bool, bool),
        f: impl FnOnce() -> Result<ImageExamples>,
    ) -> Result<Arc<ImageExamples>> {
        if let Some(v) = self.lock().get(&key) {
            return Ok(v.clone());
        }
        let v = Arc::new(f()?);
        self.lock().insert(key, v.clone());
        Ok(v)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<(String, bool, bool), Arc<ImageExamples>>> {
        self.map.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Everything an episode needs besides the episode itself.
pub struct EpisodeEnv<'a> {
    pub backend: &'a dyn Backend,
    pub images: &'a dyn ImageSource,
    pub enrollment: &'a EnrollmentConfig,
    pub inference: &'a InferenceConfig,
    /// Consulted when `enrollment.adapter_enabled` is set.
    pub adapter: Option<&'a WhitenColorTransform>,
    pub cache: Option<&'a EnrollmentCache>,
}

/// Enrolls the episode's training images into a fresh store.
pub fn enroll_episode(episode: &Episode, env: &EpisodeEnv<'_>) -> Result<PrototypeStore> {
    let dim = env.backend.descriptor().dim;
    let mut store = PrototypeStore::new(dim);
    let clock = Clock::epoch();
    let cfg = env.enrollment;
    for (label, records) in episode.labels.iter().zip(&episode.train) {
        let mut raw = Vec::new();
        let mut prov = Vec::new();
        for rec in records {
            let compute = || {
                let img = env.images.load(&rec.path)?;
                encode_image_examples(&img, env.backend, cfg, env.adapter, &clock)
            };
            let ex = match env.cache {
                Some(cache) => {
                    cache.get_or_compute((rec.path.clone(), cfg.use_augmentations, cfg.adapter_enabled), compute)?
                }
                None => Arc::new(compute()?),
            };
            for (e, p) in &ex.examples {
                raw.push(e.clone());
                prov.push(p.clone());
            }
        }
        store.insert(ObjectPrototype::new(label.clone(), label.clone(), raw, prov)?)?;
    }
    Ok(store)
}

/// Queries with their truth label and verdict, in episode order.
pub fn classify_episode(episode: &Episode, store: &PrototypeStore, env: &EpisodeEnv<'_>) -> Result<Vec<QueryOutcome>> {
    if episode.test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    episode
        .test
        .iter()
        .map(|(label, rec)| {
            let img = env.images.load(&rec.path)?;
            let r = classify_query(&img, store, env.backend, env.inference)?;
            Ok(QueryOutcome {
                image: rec.path.clone(),
                truth: label.clone(),
                predicted: r.predicted,
                confidence: r.confidence,
            })
        })
        .collect()
}

/// Silhouette of every raw vector in the store, clustered by object.
pub fn store_silhouette(store: &PrototypeStore) -> Result<f64> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, p) in store.prototypes().iter().enumerate() {
        for e in p.raw() {
            rows.push(e.as_slice());
            labels.push(i);
        }
    }
    silhouette(&EmbeddingBatch::from_rows(store.dim(), &rows)?, &labels)
}

/// Cell coordinates echoed into a [`RunResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunKey {
    pub size: ModelSize,
    pub aug: bool,
    pub adapter: bool,
    pub repeat: usize,
}

pub fn run_episode(episode: &Episode, env: &EpisodeEnv<'_>, key: RunKey) -> Result<RunResult> {
    run_episode_with(episode, env, key, false)
}

/// As [`run_episode`]; with `with_silhouette` the silhouette of the
/// enrolled raw vectors (labelled by object) is attached when `c >= 2`.
pub fn run_episode_with(
    episode: &Episode,
    env: &EpisodeEnv<'_>,
    key: RunKey,
    with_silhouette: bool,
) -> Result<RunResult> {
    let start = Instant::now();
    if episode.test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let store = enroll_episode(episode, env)?;
    let silhouette = if with_silhouette && store.len() >= 2 {
        Some(store_silhouette(&store)?)
    } else {
        None
    };
    let per_query = classify_episode(episode, &store, env)?;
    let total = per_query.len();
    let correct = per_query.iter().filter(|q| q.is_correct()).count();
    let none = per_query.iter().filter(|q| q.predicted.is_none()).count();
    Ok(RunResult {
        size: key.size,
        c: episode.c,
        k: episode.k,
        aug: key.aug,
        adapter: key.adapter,
        repeat: key.repeat,
        seed: episode.seed,
        labels: episode.labels.clone(),
        correct,
        total,
        accuracy: correct as f64 / total as f64,
        no_detection_rate: none as f64 / total as f64,
        silhouette,
        wall_time_ms: Some(start.elapsed().as_secs_f64() * 1e3),
        per_query,
    })
}
