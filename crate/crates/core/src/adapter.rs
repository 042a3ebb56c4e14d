//! Whitening–coloring alignment of image-embedding statistics onto
//! text-embedding statistics.
//!
//! With `Σ = E D Eᵀ` the symmetric eigendecomposition of a covariance,
//! whitening uses `W_zca = E_img D_img^{-1/2} E_imgᵀ` and coloring uses
//! `W_color = E_txt D_txt^{1/2} E_txtᵀ`. A row `x` (L2-normalized first) maps
//! to `((x - μ_img) W_zca) W_color + μ_txt`.
//!
//! Whitening eigenvalues are floored at `epsilon`; coloring eigenvalues are
//! clamped at zero. All arithmetic is `f64`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{EmbeddingBatch, DEGENERATE_NORM};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};

pub const FORMAT_VERSION: u64 = 1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

const COV_SYMMETRY_TOL: f64 = 1e-8;
const TRANSFORM_SYMMETRY_TOL: f64 = 1e-6;
const PSD_TOL: f64 = 1e-8;
const EIGEN_MAX_ITER: usize = 100_000;

/// Mean and unbiased covariance of L2-normalized embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl DomainStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), &StatsFile::from(self))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: StatsFile = read_json(path.as_ref())?;
        file.try_into()
    }
}

fn normalized_rows(batch: &EmbeddingBatch) -> Result<DMatrix<f64>> {
    let (n, d) = (batch.rows(), batch.dim());
    let mut m = DMatrix::<f64>::zeros(n, d);
    for (i, row) in batch.iter_rows().enumerate() {
        let norm = row.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
        if !(norm > DEGENERATE_NORM) {
            return Err(Error::DegenerateVector { norm });
        }
        for (j, &x) in row.iter().enumerate() {
            m[(i, j)] = f64::from(x) / norm;
        }
    }
    Ok(m)
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Sample statistics of the L2-normalized rows of `batch`.
pub fn estimate_stats(batch: &EmbeddingBatch) -> Result<DomainStats> {
    let n = batch.rows();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, found: n });
    }
    let mut x = normalized_rows(batch)?;
    let mean = column_mean(&x);
    for mut row in x.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = x.tr_mul(&x) / (n as f64 - 1.0);
    // Exact symmetry regardless of how the product was blocked.
    for i in 0..cov.nrows() {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(DomainStats { mean, cov, n })
}

/// Eigenpairs sorted by ascending eigenvalue; each eigenvector's first
/// nonzero component is made positive.
pub fn sorted_eigen(cov: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::try_new(cov.clone(), f64::EPSILON, EIGEN_MAX_ITER).ok_or(Error::EigenFailure)?;
    let d = cov.nrows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut vectors = DMatrix::<f64>::zeros(d, d);
    let mut values = Vec::with_capacity(d);
    for (k, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(k, &col);
        values.push(eig.eigenvalues[i]);
    }
    Ok((values, vectors))
}

fn spectral_map(values: &[f64], vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| vectors[(i, j)] * f(values[j]));
    scaled * vectors.transpose()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub min: f64,
    pub max: f64,
    /// Eigenvalues raised to `epsilon` before the inverse square root.
    pub floored: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformReport {
    pub image: SpectrumSummary,
    pub text: SpectrumSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhitenColorTransform {
    pub mu_img: DVector<f64>,
    pub w_zca: DMatrix<f64>,
    pub w_color: DMatrix<f64>,
    pub mu_txt: DVector<f64>,
    pub epsilon: f64,
}

fn check_psd(values: &[f64], which: &str) -> Result<()> {
    match values.first() {
        Some(&min) if min < -PSD_TOL => Err(Error::format(format!(
            "{which} covariance is not positive semidefinite (eigenvalue {min:e})"
        ))),
        _ => Ok(()),
    }
}

/// Builds the transform mapping `img_stats` onto `txt_stats`.
pub fn build_transform(img_stats: &DomainStats, txt_stats: &DomainStats, epsilon: f64) -> Result<WhitenColorTransform> {
    build_transform_with_report(img_stats, txt_stats, epsilon).map(|(t, _)| t)
}

pub fn build_transform_with_report(
    img_stats: &DomainStats,
    txt_stats: &DomainStats,
    epsilon: f64,
) -> Result<(WhitenColorTransform, TransformReport)> {
    if img_stats.dim() != txt_stats.dim() {
        return Err(Error::DimensionMismatch {
            expected: img_stats.dim(),
            found: txt_stats.dim(),
        });
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    let (img_vals, img_vecs) = sorted_eigen(&img_stats.cov)?;
    let (txt_vals, txt_vecs) = sorted_eigen(&txt_stats.cov)?;
    check_psd(&img_vals, "image")?;
    check_psd(&txt_vals, "text")?;

    let w_zca = spectral_map(&img_vals, &img_vecs, |l| l.max(epsilon).powf(-0.5));
    let w_color = spectral_map(&txt_vals, &txt_vecs, |l| l.max(0.0).sqrt());
    let summary = |v: &[f64]| SpectrumSummary {
        min: v.first().copied().unwrap_or(0.0),
        max: v.last().copied().unwrap_or(0.0),
        floored: v.iter().filter(|&&l| l < epsilon).count(),
    };
    let report = TransformReport {
        image: summary(&img_vals),
        text: summary(&txt_vals),
    };
    Ok((
        WhitenColorTransform {
            mu_img: img_stats.mean.clone(),
            w_zca,
            w_color,
            mu_txt: txt_stats.mean.clone(),
            epsilon,
        },
        report,
    ))
}

impl WhitenColorTransform {
    pub fn dim(&self) -> usize {
        self.mu_img.len()
    }

    /// Maps rows that are already L2-normalized.
    pub fn apply_normalized(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mu_img.transpose();
        }
        let whitened = centered * &self.w_zca;
        let mut colored = whitened * &self.w_color;
        for mut row in colored.row_iter_mut() {
            row += self.mu_txt.transpose();
        }
        Ok(colored)
    }

    /// Whitening only: `(x - μ_img) W_zca` on normalized rows.
    pub fn whiten_normalized(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mu_img.transpose();
        }
        Ok(centered * &self.w_zca)
    }

    /// Hex SHA-256 of the serialized transform.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&TransformFile::from(self)).expect("transform serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), &TransformFile::from(self))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: TransformFile = read_json(path.as_ref())?;
        file.try_into()
    }
}

/// Normalizes, centers, whitens, colors and shifts every row of `batch`.
pub fn apply_transform(t: &WhitenColorTransform, batch: &EmbeddingBatch) -> Result<EmbeddingBatch> {
    if batch.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            found: batch.dim(),
        });
    }
    if batch.is_empty() {
        return Ok(EmbeddingBatch::empty(batch.dim()));
    }
    let out = t.apply_normalized(&normalized_rows(batch)?)?;
    let mut data = Vec::with_capacity(out.len());
    for row in out.row_iter() {
        data.extend(row.iter().map(|&v| v as f32));
    }
    EmbeddingBatch::new(batch.dim(), data)
}

// File formats.

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], dim: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::format(format!("{name} is not {dim}x{dim}")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::format(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn vector_from(v: &[f64], dim: usize, name: &str) -> Result<DVector<f64>> {
    if v.len() != dim {
        return Err(Error::format(format!("{name} has {} entries, dim is {dim}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::format(format!("{name} has non-finite entries")));
    }
    Ok(DVector::from_column_slice(v))
}

fn check_symmetric(m: &DMatrix<f64>, tol: f64, name: &str) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(Error::format(format!("{name} is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn check_version(v: u64) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Version {
            found: v,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsFile {
    version: u64,
    dim: usize,
    n: usize,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl From<&DomainStats> for StatsFile {
    fn from(s: &DomainStats) -> Self {
        StatsFile {
            version: FORMAT_VERSION,
            dim: s.dim(),
            n: s.n,
            mean: s.mean.iter().copied().collect(),
            cov: matrix_rows(&s.cov),
        }
    }
}

impl TryFrom<StatsFile> for DomainStats {
    type Error = Error;

    fn try_from(f: StatsFile) -> Result<Self> {
        check_version(f.version)?;
        if f.n < 2 {
            return Err(Error::format(format!("stats sample count {} below 2", f.n)));
        }
        let mean = vector_from(&f.mean, f.dim, "mean")?;
        let cov = matrix_from_rows(&f.cov, f.dim, "cov")?;
        check_symmetric(&cov, COV_SYMMETRY_TOL, "cov")?;
        Ok(DomainStats { mean, cov, n: f.n })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformFile {
    version: u64,
    dim: usize,
    epsilon: f64,
    mu_img: Vec<f64>,
    mu_txt: Vec<f64>,
    w_zca: Vec<Vec<f64>>,
    w_color: Vec<Vec<f64>>,
}

impl From<&WhitenColorTransform> for TransformFile {
    fn from(t: &WhitenColorTransform) -> Self {
        TransformFile {
            version: FORMAT_VERSION,
            dim: t.dim(),
            epsilon: t.epsilon,
            mu_img: t.mu_img.iter().copied().collect(),
            mu_txt: t.mu_txt.iter().copied().collect(),
            w_zca: matrix_rows(&t.w_zca),
            w_color: matrix_rows(&t.w_color),
        }
    }
}

impl TryFrom<TransformFile> for WhitenColorTransform {
    type Error = Error;

    fn try_from(f: TransformFile) -> Result<Self> {
        check_version(f.version)?;
        if !(f.epsilon > 0.0 && f.epsilon.is_finite()) {
            return Err(Error::format(format!("invalid epsilon {}", f.epsilon)));
        }
        let w_zca = matrix_from_rows(&f.w_zca, f.dim, "w_zca")?;
        let w_color = matrix_from_rows(&f.w_color, f.dim, "w_color")?;
        check_symmetric(&w_zca, TRANSFORM_SYMMETRY_TOL, "w_zca")?;
        check_symmetric(&w_color, TRANSFORM_SYMMETRY_TOL, "w_color")?;
        Ok(WhitenColorTransform {
            mu_img: vector_from(&f.mu_img, f.dim, "mu_img")?,
            w_zca,
            w_color,
            mu_txt: vector_from(&f.mu_txt, f.dim, "mu_txt")?,
            epsilon: f.epsilon,
        })
    }
}
