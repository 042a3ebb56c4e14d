use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use tdid_core::adapter::{build_transform_with_report, sorted_eigen, DEFAULT_EPSILON};
use tdid_core::backend::emb1::{read_embedding_file, write_embedding_file};
use tdid_core::backend::external::{answer_requests, ExternalFiles};
use tdid_core::backend::mock::MockWorld;
use tdid_core::eval::episode::{FileSource, ImageSource};
use tdid_core::eval::grid::{mock_adapter, run_grid, SizeContext};
use tdid_core::eval::manifest::{manifest_from_directory, mock_manifest, parse_mock_path, DatasetManifest};
use tdid_core::eval::metrics::silhouette_labeled;
use tdid_core::eval::report::{
    export_embeddings, labels_path, results_table, write_reports, ExportKind, LabelsFile, ReportHeader,
};
use tdid_core::fsutil::{read_json, write_json};
use tdid_core::{
    classify_query, enroll_image, estimate_stats, Backend, Clock, DomainStats, Error, Image, ModelSize, PrototypeStore,
    QueryRecord, Result, WhitenColorTransform,
};

use crate::args::*;
use crate::config::{BackendKind, CliConfig};

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    /// Missing or conflicting arguments, reported with the command's usage.
    Usage {
        command: &'static str,
        message: String,
    },
    /// The configuration file could not be read.
    Config(Error),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(command: &'static str, message: impl Into<String>) -> Failure {
    Failure::Usage {
        command,
        message: message.into(),
    }
}

pub fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(p) => CliConfig::load(p).map_err(Failure::Config)?,
        None => CliConfig::default(),
    };
    apply_backend_flags(&mut cfg, &cli.backend);
    match cli.command {
        Command::Enroll(a) => enroll(&cfg, a),
        Command::Detect(a) => detect(&cfg, a),
        Command::Forget(a) => forget(&cfg, a),
        Command::Stats(a) => stats(&cfg, a),
        Command::BuildTransform(a) => build_transform(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Export(a) => export(&cfg, a),
        Command::Silhouette(a) => silhouette(a),
        Command::Manifest(a) => manifest(&cfg, a),
        Command::Render(a) => render(&cfg, a),
        Command::MockCorpus(a) => mock_corpus(&cfg, a),
        Command::MockRunner => mock_runner(&cfg),
    }
}

fn apply_backend_flags(cfg: &mut CliConfig, b: &BackendArgs) {
    let be = &mut cfg.backend;
    if let Some(k) = b.backend {
        be.kind = k;
    }
    if let Some(d) = &b.backend_dir {
        be.dir = Some(d.clone());
    }
    if let Some(d) = &b.request_dir {
        be.request_dir = Some(d.clone());
    }
    if b.size.is_some() {
        be.size = b.size;
    }
    if let Some(n) = b.mock_classes {
        be.mock.classes = n;
    }
    if let Some(d) = b.mock_dim {
        be.mock.dim = d;
    }
    if let Some(s) = b.mock_seed {
        be.mock.seed = s;
    }
    if b.mock_noise.is_some() {
        be.mock.noise = b.mock_noise;
    }
}

enum Loaded {
    Mock(Arc<MockWorld>),
    External(Arc<ExternalFiles>),
}

impl Loaded {
    fn backend(&self) -> Arc<dyn Backend> {
        match self {
            Loaded::Mock(w) => w.clone(),
            Loaded::External(e) => e.clone(),
        }
    }

    /// Files by path; `mock:<class>:<instance>` renders with the mock world.
    fn image(&self, spec: &str) -> Result<Image> {
        match (self, spec.starts_with("mock:")) {
            (Loaded::Mock(w), true) => {
                let (c, i) = parse_mock_path(spec)?;
                w.render(c, i)
            }
            (Loaded::External(_), true) => Err(Error::InvalidConfig(format!(
                "`{spec}` names a mock render but the backend is external"
            ))),
            (_, false) => Image::open(spec),
        }
    }
}

fn mock_world(cfg: &CliConfig, size: ModelSize) -> Result<Arc<MockWorld>> {
    Ok(Arc::new(MockWorld::with_size(
        cfg.backend.mock.world_config(size),
        size,
    )?))
}

fn open_external(cfg: &CliConfig, dir: &Path, size: Option<ModelSize>) -> Result<Arc<ExternalFiles>> {
    let mut ext = ExternalFiles::open(dir)?;
    if let Some(req) = &cfg.backend.request_dir {
        ext = ext.with_request_dir(match size {
            Some(s) => req.join(s.as_str()),
            None => req.clone(),
        });
    }
    Ok(Arc::new(ext))
}

fn load_backend(cfg: &CliConfig, command: &'static str) -> std::result::Result<Loaded, Failure> {
    let size = cfg.size();
    match cfg.backend.kind {
        BackendKind::Mock => Ok(Loaded::Mock(mock_world(cfg, size)?)),
        BackendKind::External => {
            let dir = cfg
                .backend
                .dir
                .as_deref()
                .ok_or_else(|| usage(command, "the external backend needs --backend-dir"))?;
            Ok(Loaded::External(open_external(cfg, dir, None)?))
        }
    }
}

fn store_path(cfg: &CliConfig, flag: Option<PathBuf>, command: &'static str) -> std::result::Result<PathBuf, Failure> {
    flag.or_else(|| cfg.paths.store.clone()).ok_or_else(|| {
        usage(
            command,
            "a prototype store is required: pass --store or set paths.store",
        )
    })
}

fn out_path(
    flag: Option<PathBuf>,
    fallback: &Option<PathBuf>,
    command: &'static str,
    what: &str,
) -> std::result::Result<PathBuf, Failure> {
    flag.or_else(|| fallback.clone()).ok_or_else(|| {
        usage(
            command,
            format!("an output path is required: pass --out or set paths.{what}"),
        )
    })
}

fn fmt_box(b: &tdid_core::BBox) -> String {
    let [x0, y0, x1, y1] = b.to_array();
    format!("[{x0}, {y0}, {x1}, {y1}]")
}

fn enroll(cfg: &CliConfig, a: EnrollArgs) -> Outcome {
    let path = store_path(cfg, a.store, "enroll")?;
    let mut ecfg = cfg.enrollment.clone();
    if let Some(m) = a.margin {
        ecfg.margin_px = m;
    }
    if a.augment {
        ecfg.use_augmentations = true;
    }
    if a.no_augment {
        ecfg.use_augmentations = false;
    }
    if let Some(p) = a.prompt {
        ecfg.main_object_prompt = p;
    }
    if let Some(p) = a.min_confidence {
        ecfg.min_confidence = p;
    }
    if let Some(t) = a.nms_iou {
        ecfg.nms_iou_threshold = t;
    }
    if a.full_image_fallback {
        ecfg.full_image_fallback = true;
    }
    let transform_path = a.adapter.or_else(|| {
        if ecfg.adapter_enabled {
            cfg.paths.transform.clone()
        } else {
            None
        }
    });
    let adapter = match &transform_path {
        Some(p) => {
            ecfg.adapter_enabled = true;
            Some(WhitenColorTransform::load(p)?)
        }
        None if ecfg.adapter_enabled => {
            return Err(usage(
                "enroll",
                "the adapter is enabled but no transform is given: pass --adapter",
            ))
        }
        None => None,
    };
    ecfg.validate()?;
    log::info!("cropping margin {} px", ecfg.margin_px);
    log::info!(
        "augmentations {}",
        if ecfg.use_augmentations {
            "on (4 views per crop)"
        } else {
            "off"
        }
    );
    let clock = match &a.timestamp {
        Some(t) => Clock::fixed(t)?,
        None => Clock::System,
    };

    let loaded = load_backend(cfg, "enroll")?;
    let backend = loaded.backend();
    let dim = backend.descriptor().dim;
    let mut store = if path.exists() {
        PrototypeStore::load(&path)?
    } else {
        log::info!("creating store {} (dim {dim})", path.display());
        PrototypeStore::new(dim)
    };
    let id = a.id.unwrap_or_else(|| a.label.clone());
    let mut enrolled = 0usize;
    let mut skipped = 0usize;
    let mut lines = Vec::new();
    for spec in &a.images {
        let img = loaded.image(spec)?;
        let before = store.get(&id).map_or(0, |p| p.raw().len());
        match enroll_image(
            &mut store,
            &id,
            Some(&a.label),
            &img,
            backend.as_ref(),
            &ecfg,
            adapter.as_ref(),
            &clock,
        ) {
            Ok(p) => {
                let crop = p.provenance().last().expect("enrolled object has provenance").bbox;
                lines.push(format!(
                    "{spec}\tcrop {}\t{} vectors",
                    fmt_box(&crop),
                    p.raw().len() - before
                ));
                enrolled += 1;
            }
            Err(Error::NoDetection) if !a.strict => {
                log::warn!("{spec}: nothing located, skipped");
                skipped += 1;
            }
            Err(e) => {
                log::error!("{spec}: {e}");
                return Err(e.into());
            }
        }
    }
    if enrolled == 0 {
        return Err(Error::NoDetection.into());
    }
    store.save(&path)?;
    let mut out = std::io::stdout().lock();
    for l in lines {
        let _ = writeln!(out, "{l}");
    }
    let total = store.get(&id).map_or(0, |p| p.raw().len());
    let _ = writeln!(
        out,
        "{id}: {total} raw vectors; {} objects in {}",
        store.len(),
        path.display()
    );
    if skipped > 0 {
        log::warn!("{skipped} of {} images skipped", a.images.len());
    }
    Ok(())
}

fn detect(cfg: &CliConfig, a: DetectArgs) -> Outcome {
    let path = store_path(cfg, a.store, "detect")?;
    let mut icfg = cfg.inference;
    if let Some(p) = a.min_confidence {
        icfg.min_confidence = p;
    }
    if let Some(t) = a.nms_iou {
        icfg.nms_iou_threshold = t;
    }
    icfg.validate()?;
    let store = PrototypeStore::load(&path)?;
    if store.is_empty() {
        return Err(Error::EmptyStore.into());
    }
    let loaded = load_backend(cfg, "detect")?;
    let backend = loaded.backend();
    let mut records = Vec::with_capacity(a.images.len());
    for spec in &a.images {
        let img = loaded.image(spec)?;
        let r = classify_query(&img, &store, backend.as_ref(), &icfg)?;
        log::info!(
            "{spec}: {} ({:.4})",
            r.predicted.as_deref().unwrap_or("none"),
            r.confidence
        );
        records.push(QueryRecord::new(spec.clone(), &r));
    }
    match a.out {
        Some(out) => write_json(&out, &records)?,
        None => {
            let mut out = std::io::stdout().lock();
            for r in &records {
                let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
                let _ = writeln!(out, "{line}");
            }
        }
    }
    Ok(())
}

fn forget(cfg: &CliConfig, a: ForgetArgs) -> Outcome {
    let path = store_path(cfg, a.store, "forget")?;
    let mut store = PrototypeStore::load(&path)?;
    match a.example {
        Some(i) => {
            let left = store.remove_example(&a.id, i)?.raw().len();
            println!("{}: removed example {i}, {left} left", a.id);
        }
        None => {
            store.remove_object(&a.id)?;
            println!("{}: removed, {} objects left", a.id, store.len());
        }
    }
    store.save(&path)?;
    Ok(())
}

fn spectrum_line(name: &str, values: &[f64], epsilon: f64) -> String {
    let floored = values.iter().filter(|&&l| l < epsilon).count();
    format!(
        "{name} eigenvalues: min {:.6e}, max {:.6e}, {floored} of {} below {epsilon:e}",
        values.first().copied().unwrap_or(0.0),
        values.last().copied().unwrap_or(0.0),
        values.len()
    )
}

fn stats(cfg: &CliConfig, a: StatsArgs) -> Outcome {
    let out = out_path(a.out, &cfg.paths.stats, "stats", "stats")?;
    let batch = read_embedding_file(&a.input)?;
    let s = estimate_stats(&batch)?;
    let (values, _) = sorted_eigen(&s.cov)?;
    s.save(&out)?;
    println!("{} rows, dim {}", s.n, s.dim());
    println!("{}", spectrum_line("covariance", &values, DEFAULT_EPSILON));
    Ok(())
}

fn build_transform(cfg: &CliConfig, a: BuildTransformArgs) -> Outcome {
    let out = out_path(a.out, &cfg.paths.transform, "build-transform", "transform")?;
    log::info!("epsilon {:e}", a.epsilon);
    let img = DomainStats::load(&a.image_stats)?;
    let txt = DomainStats::load(&a.text_stats)?;
    let (t, report) = build_transform_with_report(&img, &txt, a.epsilon)?;
    t.save(&out)?;
    let line = |name: &str, s: &tdid_core::adapter::SpectrumSummary| {
        format!(
            "{name} eigenvalues: min {:.6e}, max {:.6e}, {} floored at {:e}",
            s.min, s.max, s.floored, a.epsilon
        )
    };
    println!("{}", line("image", &report.image));
    println!("{}", line("text", &report.text));
    println!("transform {} written to {}", t.digest(), out.display());
    Ok(())
}

fn eval(cfg: &CliConfig, a: EvalArgs) -> Outcome {
    let mut grid = cfg.grid.clone();
    if let Some(v) = a.classes {
        grid.class_counts = v;
    }
    if let Some(v) = a.shots {
        grid.shot_counts = v;
    }
    if let Some(r) = a.repeats {
        grid.repeats = r;
    }
    if let Some(s) = a.seed {
        grid.base_seed = s;
    }
    if let Some(v) = a.sizes {
        grid.model_sizes = v;
    }
    if let Some(v) = a.aug {
        grid.augmentations = v;
    }
    match (a.adapters, &a.adapter) {
        (Some(v), _) => grid.adapters = v,
        (None, Some(_)) => grid.adapters = vec![true],
        (None, None) => {}
    }
    let mut opts = cfg.harness.clone();
    opts.jobs = a.jobs.unwrap_or(0);
    if a.keep_cluttered {
        opts.filter_train = false;
    }
    if a.no_silhouette {
        opts.silhouette = false;
    }
    if a.wall_time {
        opts.record_wall_time = true;
    }
    if let Some(m) = a.margin {
        opts.enrollment.margin_px = m;
    }
    if let Some(p) = a.min_confidence {
        opts.inference.min_confidence = p;
    }
    log::info!("cropping margin {} px", opts.enrollment.margin_px);
    log::info!("base seed {}", grid.base_seed);

    let manifest_path = a.manifest.or_else(|| cfg.paths.manifest.clone());
    let manifest = match (&manifest_path, cfg.backend.kind) {
        (Some(p), _) => DatasetManifest::load(p)?,
        (None, BackendKind::Mock) => mock_manifest(
            cfg.backend.mock.classes,
            tdid_core::eval::manifest::MOCK_TRAIN_PER_CLASS,
            tdid_core::eval::manifest::MOCK_TEST_PER_CLASS,
        ),
        (None, BackendKind::External) => return Err(usage("eval", "the external backend needs --manifest")),
    };
    let file_adapter = a
        .adapter
        .as_deref()
        .map(WhitenColorTransform::load)
        .transpose()?
        .map(Arc::new);
    let needs_adapter = grid.adapters.contains(&true);

    let mut contexts = Vec::new();
    for &size in &grid.model_sizes {
        let ctx = match cfg.backend.kind {
            BackendKind::Mock => {
                let world = mock_world(cfg, size)?;
                let adapter = match (&file_adapter, needs_adapter) {
                    (Some(t), true) => Some(t.clone()),
                    (None, true) => {
                        let (t, r) = mock_adapter(&world, cfg.backend.mock.seed)?;
                        log::info!(
                            "mock adapter for size {size}: image eigenvalues [{:.3e}, {:.3e}], {} floored",
                            r.image.min,
                            r.image.max,
                            r.image.floored
                        );
                        Some(Arc::new(t))
                    }
                    (_, false) => None,
                };
                SizeContext::new(size, world.clone(), world, adapter)
            }
            BackendKind::External => {
                let root = cfg
                    .backend
                    .dir
                    .as_deref()
                    .ok_or_else(|| usage("eval", "the external backend needs --backend-dir"))?;
                let dir = root.join(size.as_str());
                let ext = open_external(cfg, &dir, Some(size))?;
                let adapter = match (&file_adapter, needs_adapter) {
                    (Some(t), true) => Some(t.clone()),
                    (None, true) => Some(Arc::new(WhitenColorTransform::load(dir.join("transform.json"))?)),
                    (_, false) => None,
                };
                let image_root = a
                    .image_root
                    .clone()
                    .or_else(|| cfg.paths.image_root.clone())
                    .or_else(|| manifest_path.as_deref().and_then(Path::parent).map(Path::to_path_buf))
                    .unwrap_or_default();
                let images: Arc<dyn ImageSource> = Arc::new(FileSource::new(image_root));
                SizeContext::new(size, ext, images, adapter)
            }
        };
        contexts.push(ctx);
    }

    let mut header = ReportHeader::new(&grid, &opts);
    for ctx in &contexts {
        header.backends.push(ctx.backend.descriptor().clone());
        if let Some(t) = &ctx.adapter {
            header.adapters.push((ctx.size, t.digest()));
        }
    }
    log::info!("{} episodes", grid.num_episodes());
    let outcome = run_grid(&grid, &manifest, &contexts, &opts)?;
    let labels: Vec<String> = manifest.labels().iter().map(|s| s.to_string()).collect();
    let out_dir = a
        .out
        .or_else(|| cfg.paths.report_dir.clone())
        .unwrap_or_else(|| PathBuf::from("reports"));
    write_reports(&out_dir, &header, &outcome, &labels)?;
    print!("{}", results_table(&grid, &outcome.cells));
    log::info!("reports written to {}", out_dir.display());
    match outcome.error {
        Some(e) => {
            log::error!("grid stopped early; {} runs kept", outcome.runs.len());
            Err(e.into())
        }
        None => Ok(()),
    }
}

fn export(cfg: &CliConfig, a: ExportArgs) -> Outcome {
    let path = store_path(cfg, a.store, "export")?;
    let store = PrototypeStore::load(&path)?;
    let kind = if a.aggregated {
        ExportKind::Aggregated
    } else {
        ExportKind::Raw
    };
    let (batch, _) = export_embeddings(&store, &a.out, kind)?;
    println!(
        "{} vectors of dim {} written to {} (labels in {})",
        batch.rows(),
        batch.dim(),
        a.out.display(),
        labels_path(&a.out).display()
    );
    Ok(())
}

fn silhouette(a: SilhouetteArgs) -> Outcome {
    let batch = read_embedding_file(&a.input)?;
    let labels_file = a.labels.unwrap_or_else(|| labels_path(&a.input));
    let labels: LabelsFile = read_json(&labels_file)?;
    if labels.labels.len() != batch.rows() {
        return Err(Error::Format(format!(
            "{} holds {} labels for {} rows",
            labels_file.display(),
            labels.labels.len(),
            batch.rows()
        ))
        .into());
    }
    println!("{:.6}", silhouette_labeled(&batch, &labels.labels)?);
    Ok(())
}

fn manifest(cfg: &CliConfig, a: ManifestArgs) -> Outcome {
    let m = match &a.from_dir {
        Some(dir) => manifest_from_directory(dir)?,
        None => mock_manifest(cfg.backend.mock.classes, a.train_per_class, a.test_per_class),
    };
    m.validate()?;
    m.save(&a.out)?;
    let train: usize = m.objects.values().map(|o| o.train.len()).sum();
    let test: usize = m.objects.values().map(|o| o.test.len()).sum();
    println!("{} labels, {train} train and {test} test images", m.num_labels());
    Ok(())
}

fn require_mock(cfg: &CliConfig, command: &'static str) -> std::result::Result<Arc<MockWorld>, Failure> {
    match cfg.backend.kind {
        BackendKind::Mock => Ok(mock_world(cfg, cfg.size())?),
        BackendKind::External => Err(usage(command, "this command needs the mock backend")),
    }
}

fn render(cfg: &CliConfig, a: RenderArgs) -> Outcome {
    let world = require_mock(cfg, "render")?;
    world.render(a.class, a.instance)?.save(&a.out)?;
    Ok(())
}

fn mock_corpus(cfg: &CliConfig, a: MockCorpusArgs) -> Outcome {
    let world = require_mock(cfg, "mock-corpus")?;
    let batch = match a.kind {
        CorpusKind::Image => world.image_corpus(a.count, a.seed)?,
        CorpusKind::Text => {
            let sigma = a.sigma.unwrap_or_else(|| 0.5 / (world.config().dim as f64).sqrt());
            world.text_corpus(a.count, sigma, a.seed)?
        }
    };
    write_embedding_file(&a.out, &batch)?;
    println!(
        "{} rows of dim {} written to {}",
        batch.rows(),
        batch.dim(),
        a.out.display()
    );
    Ok(())
}

fn mock_runner(cfg: &CliConfig) -> Outcome {
    let (Some(root), Some(req)) = (&cfg.backend.dir, &cfg.backend.request_dir) else {
        return Err(usage(
            "mock-runner",
            "both --backend-dir and --request-dir are required",
        ));
    };
    let world = mock_world(cfg, cfg.size())?;
    let n = answer_requests(root, req, world.as_ref())?;
    println!("{n} requests answered into {}", root.display());
    Ok(())
}
