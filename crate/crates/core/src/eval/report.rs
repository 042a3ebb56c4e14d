//! Report files for a grid run and embedding export.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::episode::RunResult;
use super::grid::{CellSummary, ExperimentGrid, GridOutcome, HarnessOptions, SEED_MIX_DOC};
use super::metrics::{calibration, confusion, CalibrationHistogram, ConfusionMatrix, DEFAULT_CALIBRATION_BINS};
use crate::backend::emb1::write_embedding_file;
use crate::backend::{BackendDescriptor, ModelSize};
use crate::embedding::EmbeddingBatch;
use crate::enrollment::PrototypeStore;
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_json};

pub const CSV_HEADER: &str = "size,c,k,aug,adapter,mean,std,n";

#[derive(Debug, Clone, Serialize)]
pub struct ReportHeader {
    pub seed_mix: &'static str,
    pub grid: ExperimentGrid,
    pub options: HarnessOptions,
    pub backends: Vec<BackendDescriptor>,
    /// Digests of the adapters per size, when used.
    pub adapters: Vec<(ModelSize, String)>,
}

impl ReportHeader {
    pub fn new(grid: &ExperimentGrid, options: &HarnessOptions) -> Self {
        Self {
            seed_mix: SEED_MIX_DOC,
            grid: grid.clone(),
            options: options.clone(),
            backends: Vec::new(),
            adapters: Vec::new(),
        }
    }
}

#[derive(Serialize)]
struct ResultsFile<'a> {
    header: &'a ReportHeader,
    cells: &'a [CellSummary],
    runs: &'a [RunResult],
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockAnalysis {
    pub size: ModelSize,
    pub aug: bool,
    pub adapter: bool,
    pub c: usize,
    pub k: usize,
    pub confusion: ConfusionMatrix,
    pub calibration: CalibrationHistogram,
}

/// Confusion and calibration per (size, aug, adapter) block at the largest
/// c and k of the grid.
pub fn analyze(grid: &ExperimentGrid, runs: &[RunResult], labels: &[String]) -> Result<Vec<BlockAnalysis>> {
    let (Some(&c), Some(&k)) = (grid.class_counts.iter().max(), grid.shot_counts.iter().max()) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for &size in &grid.model_sizes {
        for &aug in &grid.augmentations {
            for &adapter in &grid.adapters {
                let sel: Vec<RunResult> = runs
                    .iter()
                    .filter(|r| r.size == size && r.aug == aug && r.adapter == adapter && r.c == c && r.k == k)
                    .cloned()
                    .collect();
                if sel.is_empty() {
                    continue;
                }
                out.push(BlockAnalysis {
                    size,
                    aug,
                    adapter,
                    c,
                    k,
                    confusion: confusion(&sel, labels),
                    calibration: calibration(&sel, DEFAULT_CALIBRATION_BINS)?,
                });
            }
        }
    }
    Ok(out)
}

pub fn results_csv(cells: &[CellSummary]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for c in cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6},{:.6},{}",
            c.size, c.c, c.k, c.aug, c.adapter, c.mean, c.std, c.n
        );
    }
    s
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Accuracy grids in percent, `mean (std)`, one block per (size, aug,
/// adapter); rows are class counts, columns shot counts.
pub fn results_table(grid: &ExperimentGrid, cells: &[CellSummary]) -> String {
    let mut s = String::new();
    for &size in &grid.model_sizes {
        for &aug in &grid.augmentations {
            for &adapter in &grid.adapters {
                let _ = writeln!(s, "size={size} aug={} adapter={}", on_off(aug), on_off(adapter));
                let _ = write!(s, "{:>6}", "c\\k");
                for k in &grid.shot_counts {
                    let _ = write!(s, " {k:>15}");
                }
                s.push('\n');
                for &c in &grid.class_counts {
                    let _ = write!(s, "{c:>6}");
                    for &k in &grid.shot_counts {
                        let cell = cells
                            .iter()
                            .find(|x| x.size == size && x.aug == aug && x.adapter == adapter && x.c == c && x.k == k);
                        let text = match cell {
                            Some(x) => format!("{:.2} ({:.2})", 100.0 * x.mean, 100.0 * x.std),
                            None => "n/a".to_string(),
                        };
                        let _ = write!(s, " {text:>15}");
                    }
                    s.push('\n');
                }
                s.push('\n');
            }
        }
    }
    s
}

fn analysis_text(blocks: &[BlockAnalysis]) -> String {
    let mut s = String::new();
    for b in blocks {
        let _ = writeln!(
            s,
            "size={} aug={} adapter={} c={} k={}",
            b.size,
            on_off(b.aug),
            on_off(b.adapter),
            b.c,
            b.k
        );
        let _ = writeln!(s, "confusion (rows true, columns predicted by index):");
        s += &b.confusion.render();
        let _ = writeln!(s, "confidence of misclassified queries:");
        s += &b.calibration.render();
        s.push('\n');
    }
    s
}

/// Writes `results.csv`, `results.json`, `table.txt`, `analysis.json` and
/// `analysis.txt` into `dir`. Partial outcomes are written as they are,
/// with the error recorded in `results.json`.
pub fn write_reports(dir: &Path, header: &ReportHeader, outcome: &GridOutcome, labels: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let grid = &header.grid;
    write_atomic(&dir.join("results.csv"), results_csv(&outcome.cells).as_bytes())?;
    write_json(
        &dir.join("results.json"),
        &ResultsFile {
            header,
            cells: &outcome.cells,
            runs: &outcome.runs,
            error: outcome.error.as_ref().map(|e| e.to_string()),
        },
    )?;
    write_atomic(&dir.join("table.txt"), results_table(grid, &outcome.cells).as_bytes())?;
    let blocks = analyze(grid, &outcome.runs, labels)?;
    write_json(&dir.join("analysis.json"), &blocks)?;
    write_atomic(&dir.join("analysis.txt"), analysis_text(&blocks).as_bytes())?;
    Ok(())
}

/// Which vectors of a store to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    Raw,
    Aggregated,
}

/// Sidecar path: `x.emb1` becomes `x.labels.json`.
pub fn labels_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("labels.json")
}

#[derive(Debug, Serialize, serde::Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct LabelsFile {
    pub labels: Vec<String>,
}

/// Writes the store's vectors as EMB1 with a `{"labels": [...]}` sidecar
/// holding the object id of every row.
pub fn export_embeddings(
    store: &PrototypeStore,
    path: &Path,
    kind: ExportKind,
) -> Result<(EmbeddingBatch, Vec<String>)> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let mut rows: Vec<&[f32]> = Vec::new();
    let mut labels = Vec::new();
    for p in store.prototypes() {
        match kind {
            ExportKind::Raw => {
                for e in p.raw() {
                    rows.push(e.as_slice());
                    labels.push(p.id().to_string());
                }
            }
            ExportKind::Aggregated => {
                rows.push(p.aggregated().as_slice());
                labels.push(p.id().to_string());
            }
        }
    }
    let batch = EmbeddingBatch::from_rows(store.dim(), &rows)?;
    write_embedding_file(path, &batch)?;
    write_json(&labels_path(path), &LabelsFile { labels: labels.clone() })?;
    Ok((batch, labels))
}
