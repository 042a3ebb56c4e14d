//! JSON configuration file. Every section is optional; command-line flags
//! override whatever the file sets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tdid_core::backend::mock::{noise_preset, MockWorldConfig};
use tdid_core::eval::grid::{ExperimentGrid, HarnessOptions};
use tdid_core::fsutil::read_json;
use tdid_core::{EnrollmentConfig, InferenceConfig, ModelSize, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockSettings {
    pub classes: usize,
    pub dim: usize,
    pub seed: u64,
    /// Encoder noise for every size; `None` uses the per-size preset.
    pub noise: Option<f64>,
    pub image_size: u32,
}

impl Default for MockSettings {
    fn default() -> Self {
        let d = MockWorldConfig::default();
        Self {
            classes: d.num_classes,
            dim: d.dim,
            seed: d.seed,
            noise: None,
            image_size: d.image_size,
        }
    }
}

impl MockSettings {
    pub fn world_config(&self, size: ModelSize) -> MockWorldConfig {
        MockWorldConfig {
            num_classes: self.classes,
            dim: self.dim,
            seed: self.seed,
            noise_sigma: self.noise.unwrap_or_else(|| noise_preset(size)),
            image_size: self.image_size,
            ..MockWorldConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Root of the external runner files. `eval` expects one
    /// subdirectory per model size.
    pub dir: Option<PathBuf>,
    /// Where the external backend records images and prompt sets it had
    /// no answer for.
    pub request_dir: Option<PathBuf>,
    pub size: Option<ModelSize>,
    pub mock: MockSettings,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub store: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub transform: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    /// Root that manifest image paths are relative to; defaults to the
    /// manifest's directory.
    pub image_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub backend: BackendConfig,
    pub paths: PathsConfig,
    /// Used by `enroll`.
    pub enrollment: EnrollmentConfig,
    /// Used by `detect`.
    pub inference: InferenceConfig,
    pub grid: ExperimentGrid,
    /// Enrollment and inference settings of `eval` live here.
    pub harness: HarnessOptions,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn size(&self) -> ModelSize {
        self.backend.size.unwrap_or(ModelSize::M)
    }
}
