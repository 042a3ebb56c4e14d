//! Vectors in the shared text/image latent space.
//!
//! Components are stored as `f32`; every reduction (norms, sums, dot
//! products) is carried out in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this value are treated as unusable.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Tolerance on the norm of a [`UnitEmbedding`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpace {
    dim: usize,
}

impl EmbeddingSpace {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "embedding dimension must be at least 2, got {dim}"
            )));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn check(&self, found: usize) -> Result<()> {
        if found == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                found,
            })
        }
    }
}

impl Default for EmbeddingSpace {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

/// A finite point in the latent space (a raw encoder output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(components: Vec<f32>) -> Result<Self> {
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(Error::format(format!("component {i} is not finite")));
        }
        Ok(Self(components))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = Error;

    fn try_from(v: Vec<f32>) -> Result<Self> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

impl AsRef<[f32]> for Embedding {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// An embedding with unit L2 norm (within [`UNIT_TOLERANCE`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct UnitEmbedding(Vec<f32>);

impl UnitEmbedding {
    /// Wraps components that are already unit norm.
    pub fn from_unit(components: Vec<f32>) -> Result<Self> {
        let e = Embedding::new(components)?;
        let n = e.norm();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::format(format!("vector norm {n} is not 1")));
        }
        Ok(Self(e.0))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Dot product; equals cosine similarity for two unit vectors.
    pub fn dot(&self, other: &UnitEmbedding) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn to_embedding(&self) -> Embedding {
        Embedding(self.0.clone())
    }
}

impl TryFrom<Vec<f32>> for UnitEmbedding {
    type Error = Error;

    fn try_from(v: Vec<f32>) -> Result<Self> {
        UnitEmbedding::from_unit(v)
    }
}

impl From<UnitEmbedding> for Vec<f32> {
    fn from(e: UnitEmbedding) -> Self {
        e.0
    }
}

impl AsRef<[f32]> for UnitEmbedding {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Row-major `rows × dim` matrix of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingBatch {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("batch dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::format(format!(
                "batch buffer of {} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|c| !c.is_finite()) {
            return Err(Error::format(format!("row {} has a non-finite component", i / dim)));
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

fn normalize_f64(v: &[f64]) -> Result<UnitEmbedding> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > DEGENERATE_NORM) {
        return Err(Error::DegenerateVector { norm: n });
    }
    Ok(UnitEmbedding(v.iter().map(|x| (x / n) as f32).collect()))
}

/// Scales `v` to unit L2 norm.
pub fn l2_normalize(v: &[f32]) -> Result<UnitEmbedding> {
    if let Some(i) = v.iter().position(|c| !c.is_finite()) {
        return Err(Error::format(format!("component {i} is not finite")));
    }
    let wide: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
    normalize_f64(&wide)
}

/// Normalized componentwise sum of the raw embeddings of one object.
///
/// Every vector carries equal weight.
pub fn aggregate_prototype<V: AsRef<[f32]>>(raw: &[V]) -> Result<UnitEmbedding> {
    let first = raw.first().ok_or(Error::EmptyPrototype)?.as_ref();
    let dim = first.len();
    let mut sum = vec![0.0f64; dim];
    for v in raw {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        for (s, &x) in sum.iter_mut().zip(v) {
            *s += f64::from(x);
        }
    }
    normalize_f64(&sum)
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    for n in [na, nb] {
        if !(n > DEGENERATE_NORM) {
            return Err(Error::DegenerateVector { norm: n });
        }
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
