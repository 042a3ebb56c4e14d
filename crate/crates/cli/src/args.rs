use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::BackendKind;
use tdid_core::ModelSize;

/// Few-shot target-driven instance detection: enroll objects from a handful
/// of images, detect them in new ones, and run seeded evaluation grids.
///
/// Exit codes: 0 success, 2 usage or configuration error, 3 I/O, format or
/// data error, 4 backend failure, 5 no detection (strict enrollment).
#[derive(Debug, Parser)]
#[command(name = "tdid", version, max_term_width = 100)]
pub struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(
        long,
        global = true,
        env = "TDID_CONFIG",
        help_heading = "Global options",
        value_name = "FILE"
    )]
    pub config: Option<PathBuf>,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count, help_heading = "Global options")]
    pub verbose: u8,

    /// Only warnings and errors on stderr.
    #[arg(
        short,
        long,
        global = true,
        conflicts_with = "verbose",
        help_heading = "Global options"
    )]
    pub quiet: bool,

    #[command(flatten)]
    pub backend: BackendArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
#[command(next_help_heading = "Backend options")]
pub struct BackendArgs {
    /// Embedding and detection backend.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,

    /// Directory of external runner files (descriptor.json, EMB1 tables,
    /// detections/). `eval` reads one subdirectory per model size.
    #[arg(long, global = true, value_name = "DIR")]
    pub backend_dir: Option<PathBuf>,

    /// Record images and prompt sets the external backend could not answer.
    #[arg(long, global = true, value_name = "DIR")]
    pub request_dir: Option<PathBuf>,

    /// Model size preset for single-size commands [default: m].
    #[arg(long, global = true, value_name = "SIZE")]
    pub size: Option<ModelSize>,

    /// Number of classes in the mock world [default: 19].
    #[arg(long, global = true, value_name = "N")]
    pub mock_classes: Option<usize>,

    /// Embedding dimension of the mock world [default: 512].
    #[arg(long, global = true, value_name = "D")]
    pub mock_dim: Option<usize>,

    /// Seed of the mock world's latents [default: 0].
    #[arg(long, global = true, value_name = "SEED")]
    pub mock_seed: Option<u64>,

    /// Mock encoder noise for every size, replacing the per-size presets
    /// (s 0.24, m 0.20, l 0.16).
    #[arg(long, global = true, value_name = "SIGMA")]
    pub mock_noise: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enroll an object from example images into a prototype store.
    Enroll(EnrollArgs),
    /// Detect and classify enrolled objects in query images.
    Detect(DetectArgs),
    /// Remove an object, or one example of it, from a store.
    Forget(ForgetArgs),
    /// Estimate mean and covariance of an EMB1 corpus.
    Stats(StatsArgs),
    /// Build the whitening-coloring transform from image and text statistics.
    BuildTransform(BuildTransformArgs),
    /// Run the episodic evaluation grid and write reports.
    Eval(EvalArgs),
    /// Export a store's vectors as EMB1 with a labels sidecar.
    Export(ExportArgs),
    /// Silhouette score of labelled embeddings under cosine distance.
    Silhouette(SilhouetteArgs),
    /// Write a dataset manifest, from a directory tree or for the mock world.
    Manifest(ManifestArgs),
    /// Render a mock image to a PNG file.
    Render(RenderArgs),
    /// Write a mock embedding corpus for statistics estimation.
    MockCorpus(MockCorpusArgs),
    /// Answer recorded external-backend requests with the mock world,
    /// acting as the model runner for `--backend-dir`.
    MockRunner,
}

#[derive(Debug, Args)]
pub struct EnrollArgs {
    /// Prototype store; created when missing.
    #[arg(long, value_name = "FILE")]
    pub store: Option<PathBuf>,

    /// Label of the object.
    #[arg(long)]
    pub label: String,

    /// Object id [default: the label].
    #[arg(long)]
    pub id: Option<String>,

    /// Example images: files, or `mock:<class>:<instance>` with the mock backend.
    #[arg(required = true, value_name = "IMAGE")]
    pub images: Vec<String>,

    /// Pixels added around the located object [default: 15].
    #[arg(long, value_name = "PX")]
    pub margin: Option<f64>,

    /// Encode the four orientation augmentations of every crop [default].
    #[arg(long, overrides_with = "no_augment")]
    pub augment: bool,

    /// Encode only the unaugmented crop.
    #[arg(long, overrides_with = "augment")]
    pub no_augment: bool,

    /// Prompt used to locate the object [default: "main object"].
    #[arg(long)]
    pub prompt: Option<String>,

    /// Score floor for the located object [default: 0.05].
    #[arg(long, value_name = "P")]
    pub min_confidence: Option<f64>,

    /// IoU threshold of the localization NMS [default: 0.5].
    #[arg(long, value_name = "T")]
    pub nms_iou: Option<f64>,

    /// Whitening-coloring transform applied to every raw vector.
    #[arg(long, value_name = "FILE")]
    pub adapter: Option<PathBuf>,

    /// Enroll the whole image when nothing is located.
    #[arg(long)]
    pub full_image_fallback: bool,

    /// Fail without writing the store if any image has no detection;
    /// otherwise such images are skipped with a warning.
    #[arg(long)]
    pub strict: bool,

    /// Fixed RFC 3339 provenance timestamp instead of the system clock.
    #[arg(long, value_name = "TIME")]
    pub timestamp: Option<String>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Prototype store [default: `paths.store` of the config file].
    #[arg(long, value_name = "FILE")]
    pub store: Option<PathBuf>,

    /// Query images: files, or `mock:<class>:<instance>` with the mock backend.
    #[arg(required = true, value_name = "IMAGE")]
    pub images: Vec<String>,

    /// Detections scoring below this are dropped [default: 0.05].
    #[arg(long, value_name = "P")]
    pub min_confidence: Option<f64>,

    /// Per-class NMS IoU threshold [default: 0.5].
    #[arg(long, value_name = "T")]
    pub nms_iou: Option<f64>,

    /// Write a JSON array here instead of JSON lines on stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForgetArgs {
    /// Prototype store [default: `paths.store` of the config file].
    #[arg(long, value_name = "FILE")]
    pub store: Option<PathBuf>,

    /// Object id.
    #[arg(long)]
    pub id: String,

    /// Remove only this raw example (0-based) instead of the whole object.
    #[arg(long, value_name = "INDEX")]
    pub example: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// EMB1 corpus.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// Output statistics JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildTransformArgs {
    /// Statistics of the image-embedding domain.
    #[arg(long, value_name = "FILE")]
    pub image_stats: PathBuf,

    /// Statistics of the text-embedding domain.
    #[arg(long, value_name = "FILE")]
    pub text_stats: PathBuf,

    /// Output transform JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Floor for image eigenvalues before the inverse square root.
    #[arg(long, default_value_t = tdid_core::adapter::DEFAULT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset manifest [default: the mock manifest].
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,

    /// Root for manifest image paths [default: the manifest's directory].
    #[arg(long, value_name = "DIR")]
    pub image_root: Option<PathBuf>,

    /// Class counts, comma separated [default: 2,4,9,19].
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub classes: Option<Vec<usize>>,

    /// Shot counts, comma separated [default: 1,3,5,10].
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub shots: Option<Vec<usize>>,

    /// Episodes per cell [default: 30].
    #[arg(long, value_name = "N")]
    pub repeats: Option<usize>,

    /// Base seed of every episode [default: 42].
    #[arg(long)]
    pub seed: Option<u64>,

    /// Model sizes, comma separated [default: s,m,l].
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub sizes: Option<Vec<ModelSize>>,

    /// Augmentation settings to cover: on, off [default: off,on].
    #[arg(long, value_delimiter = ',', value_name = "LIST", value_parser = parse_on_off)]
    pub aug: Option<Vec<bool>>,

    /// Adapter settings to cover: on, off [default: off,on, or on with --adapter].
    #[arg(long, value_delimiter = ',', value_name = "LIST", value_parser = parse_on_off)]
    pub adapters: Option<Vec<bool>>,

    /// Transform used for every size when the adapter is on. Without it
    /// the mock backend builds its own and the external backend reads
    /// `<backend-dir>/<size>/transform.json`.
    #[arg(long, value_name = "FILE")]
    pub adapter: Option<PathBuf>,

    /// Worker threads; 0 uses every core.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,

    /// Report directory [default: reports].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Keep cluttered and blind-captured training images.
    #[arg(long)]
    pub keep_cluttered: bool,

    /// Skip silhouette scores.
    #[arg(long)]
    pub no_silhouette: bool,

    /// Record per-run wall time (reports are then no longer byte-stable).
    #[arg(long)]
    pub wall_time: bool,

    /// Cropping margin in pixels [default: 15].
    #[arg(long, value_name = "PX")]
    pub margin: Option<f64>,

    /// Detection score floor [default: 0.05].
    #[arg(long, value_name = "P")]
    pub min_confidence: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Prototype store [default: `paths.store` of the config file].
    #[arg(long, value_name = "FILE")]
    pub store: Option<PathBuf>,

    /// Output EMB1 file; labels go to the `.labels.json` sidecar.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Export one aggregated vector per object instead of the raw vectors.
    #[arg(long)]
    pub aggregated: bool,
}

#[derive(Debug, Args)]
pub struct SilhouetteArgs {
    /// EMB1 file.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// Labels JSON [default: the `.labels.json` sidecar of the input].
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    /// Build from a directory tree of `<split>/.../<label>/<image>` files.
    #[arg(long, value_name = "DIR")]
    pub from_dir: Option<PathBuf>,

    /// Training images per class of the mock manifest.
    #[arg(long, default_value_t = tdid_core::eval::manifest::MOCK_TRAIN_PER_CLASS)]
    pub train_per_class: usize,

    /// Test images per class of the mock manifest.
    #[arg(long, default_value_t = tdid_core::eval::manifest::MOCK_TEST_PER_CLASS)]
    pub test_per_class: usize,

    /// Output manifest JSON.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Mock class index.
    #[arg(long)]
    pub class: usize,

    /// Instance seed; each instance has its own pixel noise.
    #[arg(long, default_value_t = 0)]
    pub instance: u64,

    /// Output image; the format follows the extension.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CorpusKind {
    Image,
    Text,
}

#[derive(Debug, Args)]
pub struct MockCorpusArgs {
    /// Image renders or perturbed class latents.
    #[arg(long, value_enum)]
    pub kind: CorpusKind,

    /// Number of rows.
    #[arg(long, default_value_t = tdid_core::eval::grid::MOCK_CORPUS_SIZE)]
    pub count: usize,

    /// Perturbation of text rows [default: 0.5 / sqrt(dim)].
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Corpus seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output EMB1 file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(format!("expected `on` or `off`, got `{s}`")),
    }
}
