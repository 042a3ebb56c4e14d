//! Few-shot instance detection on top of an open-vocabulary detector.
//!
//! A handful of photos per object are localized, cropped, augmented and
//! encoded; the normalized sum of the embeddings becomes the object's
//! prototype, which is then handed to the detector as a query prompt.

// `!(x > limit)` is used on purpose so that NaN lands on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod augment;
pub mod backend;
pub mod embedding;
pub mod enrollment;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod geometry;
pub mod inference;
pub mod seed;

pub use adapter::{apply_transform, build_transform, estimate_stats, DomainStats, WhitenColorTransform};
pub use augment::{apply_augmentation, default_augmentation_set, AugmentationKind, Image};
pub use backend::{Backend, BackendDescriptor, ModelSize};
pub use embedding::{
    aggregate_prototype, cosine_similarity, l2_normalize, Embedding, EmbeddingBatch, EmbeddingSpace, UnitEmbedding,
};
pub use enrollment::{enroll_image, Clock, EnrollmentConfig, ObjectPrototype, PrototypeStore, Provenance};
pub use error::{Error, Result};
pub use geometry::{crop_with_margin, iou, nms, nms_per_class, top1, BBox, Detection, ImageDims, PixelRect};
pub use inference::{classify_query, detect_objects, ClassificationResult, InferenceConfig, QueryRecord};
