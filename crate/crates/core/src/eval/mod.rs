//! Episodic evaluation: manifests, c-way k-shot episodes, the experiment
//! grid, metrics and reports.

pub mod episode;
pub mod grid;
pub mod manifest;
pub mod metrics;
pub mod report;

pub use episode::{run_episode, sample_episode, Episode, FileSource, ImageSource, QueryOutcome, RunResult};
pub use grid::{mock_context, run_grid, CellSummary, ExperimentGrid, GridOutcome, HarnessOptions, SizeContext};
pub use manifest::{
    filter_train_images, manifest_from_directory, mock_manifest, DatasetManifest, ImageFlags, ImageRecord,
};
pub use metrics::{calibration, confusion, silhouette, CalibrationHistogram, ConfusionMatrix};
pub use report::{export_embeddings, write_reports, ExportKind, ReportHeader};
