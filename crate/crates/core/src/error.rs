use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate vector: norm {norm:e} is at or below the usable threshold")]
    DegenerateVector { norm: f64 },

    #[error("empty prototype: at least one raw embedding is required")]
    EmptyPrototype,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no detection passed the confidence floor")]
    NoDetection,

    #[error("crop is empty after clamping to the image bounds")]
    EmptyCrop,

    #[error("too many classes: {classes} classes cannot be orthonormal in dimension {dim}")]
    TooManyClasses { classes: usize, dim: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown object id `{0}`")]
    UnknownObject(String),

    #[error("index {index} out of range for object `{id}` with {len} examples")]
    ExampleIndex { id: String, index: usize, len: usize },

    #[error("insufficient samples: {found} rows, at least {needed} required")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("eigendecomposition did not converge")]
    EigenFailure,

    #[error("prototype store is empty")]
    EmptyStore,

    #[error("adapter mismatch: store was built with adapter {store:?}, got {given:?}")]
    AdapterMismatch {
        store: Option<String>,
        given: Option<String>,
    },

    #[error("backend failure: {0}")]
    BackendFailure(String),

    #[error("label `{0}` has no eligible training images")]
    EmptyTrainSet(String),

    #[error("label `{label}` has {available} eligible training images, {needed} requested")]
    InsufficientExamples {
        label: String,
        needed: usize,
        available: usize,
    },

    #[error("episode has no test images")]
    EmptyTestSet,

    #[error("silhouette needs at least two clusters, found {0}")]
    DegenerateClustering(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("image decode error for {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },
}

impl Error {
    /// Variant name, stable across message rewording.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateVector { .. } => "DegenerateVector",
            Error::EmptyPrototype => "EmptyPrototype",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NoDetection => "NoDetection",
            Error::EmptyCrop => "EmptyCrop",
            Error::TooManyClasses { .. } => "TooManyClasses",
            Error::Format(_) => "Format",
            Error::Version { .. } => "Version",
            Error::Io { .. } => "Io",
            Error::UnknownObject(_) => "UnknownObject",
            Error::ExampleIndex { .. } => "ExampleIndex",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::EigenFailure => "EigenFailure",
            Error::EmptyStore => "EmptyStore",
            Error::AdapterMismatch { .. } => "AdapterMismatch",
            Error::BackendFailure(_) => "BackendFailure",
            Error::EmptyTrainSet(_) => "EmptyTrainSet",
            Error::InsufficientExamples { .. } => "InsufficientExamples",
            Error::EmptyTestSet => "EmptyTestSet",
            Error::DegenerateClustering(_) => "DegenerateClustering",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::ImageDecode { .. } => "ImageDecode",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
