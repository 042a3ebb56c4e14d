//! Query-time detection with the enrolled prototypes as prompts, and the
//! single-label verdict derived from it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::augment::Image;
use crate::backend::{validate_detections, Backend};
use crate::enrollment::PrototypeStore;
use crate::error::{Error, Result};
use crate::geometry::{nms_per_class, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub min_confidence: f64,
    pub nms_iou_threshold: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            min_confidence: 0.05,
            nms_iou_threshold: 0.5,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::InvalidConfig(format!(
                "min confidence {} outside [0, 1]",
                self.min_confidence
            )));
        }
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "nms iou threshold {} outside (0, 1]",
                self.nms_iou_threshold
            )));
        }
        Ok(())
    }
}

/// Runs the detector once with every aggregated prototype as a prompt;
/// `class_index` refers to store order.
pub fn detect_objects(
    img: &Image,
    store: &PrototypeStore,
    backend: &dyn Backend,
    min_confidence: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let dim = backend.descriptor().dim;
    if dim != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            found: dim,
        });
    }
    let dets = backend.detect(img, &store.prompts())?;
    validate_detections(&dets, store.len())?;
    let kept: Vec<Detection> = dets.into_iter().filter(|d| d.score >= min_confidence).collect();
    Ok(nms_per_class(&kept, nms_iou))
}

/// Verdict for one query. `predicted` is `None` when nothing passed the
/// confidence floor, in which case `confidence` is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationResult {
    pub predicted: Option<String>,
    pub confidence: f64,
    /// Best score per object in store order; objects without a surviving
    /// detection score 0.
    pub all_scores: Vec<(String, f64)>,
    pub detections: Vec<Detection>,
}

/// Per-object maxima and the argmax; ties go to the earlier object.
pub fn verdict(store: &PrototypeStore, detections: Vec<Detection>) -> ClassificationResult {
    let mut best = vec![0.0f64; store.len()];
    let mut hit = vec![false; store.len()];
    for d in &detections {
        let i = d.class_index;
        if !hit[i] || d.score > best[i] {
            best[i] = d.score;
            hit[i] = true;
        }
    }
    let mut winner: Option<usize> = None;
    for i in 0..store.len() {
        if hit[i] && winner.is_none_or(|w| best[i] > best[w]) {
            winner = Some(i);
        }
    }
    let protos = store.prototypes();
    ClassificationResult {
        predicted: winner.map(|w| protos[w].id().to_string()),
        confidence: winner.map_or(0.0, |w| best[w]),
        all_scores: protos
            .iter()
            .zip(&best)
            .map(|(p, &s)| (p.id().to_string(), s))
            .collect(),
        detections,
    }
}

pub fn classify_query(
    img: &Image,
    store: &PrototypeStore,
    backend: &dyn Backend,
    cfg: &InferenceConfig,
) -> Result<ClassificationResult> {
    cfg.validate()?;
    let dets = detect_objects(img, store, backend, cfg.min_confidence, cfg.nms_iou_threshold)?;
    Ok(verdict(store, dets))
}

/// Serialized form of one query verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub image: String,
    pub predicted: Option<String>,
    pub confidence: f64,
    pub scores: BTreeMap<String, f64>,
    pub detections: Vec<Detection>,
}

impl QueryRecord {
    pub fn new(image: impl Into<String>, r: &ClassificationResult) -> Self {
        Self {
            image: image.into(),
            predicted: r.predicted.clone(),
            confidence: r.confidence,
            scores: r.all_scores.iter().cloned().collect(),
            detections: r.detections.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockWorld, MockWorldConfig, BACKGROUND_RGB};
    use crate::embedding::Embedding;
    use crate::enrollment::{enroll_image, Clock, EnrollmentConfig, ObjectPrototype, Provenance};
    use crate::geometry::BBox;
    use crate::AugmentationKind;

    fn world(classes: usize, sigma: f64) -> MockWorld {
        MockWorld::new(MockWorldConfig {
            num_classes: classes,
            dim: 64,
            noise_sigma: sigma,
            seed: 11,
            ..MockWorldConfig::default()
        })
        .unwrap()
    }

    fn enrolled(w: &MockWorld, classes: &[usize]) -> PrototypeStore {
        let mut store = PrototypeStore::new(w.config().dim);
        let cfg = EnrollmentConfig::default();
        for &c in classes {
            let img = w.render(c, 100 + c as u64).unwrap();
            enroll_image(
                &mut store,
                &format!("obj{c}"),
                None,
                &img,
                w,
                &cfg,
                None,
                &Clock::epoch(),
            )
            .unwrap();
        }
        store
    }

    fn prov() -> Provenance {
        Provenance {
            image_sha256: "0".repeat(64),
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            augmentation: AugmentationKind::Identity,
            adapted: false,
            timestamp: "1970-01-01T00:00:00Z".into(),
        }
    }

    fn toy_store(n: usize) -> PrototypeStore {
        let mut s = PrototypeStore::new(2);
        for i in 0..n {
            let e = Embedding::new(vec![1.0, i as f32]).unwrap();
            s.insert(ObjectPrototype::new(format!("o{i}"), "l", vec![e], vec![prov()]).unwrap())
                .unwrap();
        }
        s
    }

    fn det(class: usize, score: f64) -> Detection {
        Detection::new(BBox::new(0.0, 0.0, 4.0, 4.0).unwrap(), class, score).unwrap()
    }

    #[test]
    fn empty_store_is_an_error() {
        let w = world(4, 0.0);
        let store = PrototypeStore::new(64);
        let img = w.render(0, 0).unwrap();
        assert!(matches!(
            classify_query(&img, &store, &w, &InferenceConfig::default()),
            Err(Error::EmptyStore)
        ));
    }

    #[test]
    fn orthonormal_scores_are_one_and_half() {
        let w = world(4, 0.0);
        let store = enrolled(&w, &[0, 1]);
        let dets = detect_objects(&w.render(0, 7).unwrap(), &store, &w, 0.0, 0.5).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].class_index, 0);
        assert!((dets[0].score - 1.0).abs() < 1e-6);
        assert!((dets[1].score - 0.5).abs() < 1e-6);

        let blank = Image::filled(96, 96, BACKGROUND_RGB).unwrap();
        assert!(detect_objects(&blank, &store, &w, 0.05, 0.5).unwrap().is_empty());
        let r = classify_query(&blank, &store, &w, &InferenceConfig::default()).unwrap();
        assert_eq!(r.predicted, None);
        assert_eq!(r.confidence, 0.0);
    }

    #[test]
    fn noise_free_world_is_classified_perfectly() {
        let w = MockWorld::new(MockWorldConfig {
            dim: 128,
            seed: 5,
            ..MockWorldConfig::default()
        })
        .unwrap();
        let all: Vec<usize> = (0..19).collect();
        let store = enrolled(&w, &all);
        for c in all {
            let r = classify_query(&w.render(c, 999).unwrap(), &store, &w, &InferenceConfig::default()).unwrap();
            assert_eq!(r.predicted.as_deref(), Some(format!("obj{c}").as_str()));
        }
    }

    #[test]
    fn verdict_argmax_and_ties() {
        let s = toy_store(3);
        let r = verdict(&s, vec![det(0, 0.8), det(1, 0.3), det(0, 0.4)]);
        assert_eq!(r.predicted.as_deref(), Some("o0"));
        assert_eq!(r.confidence, 0.8);
        assert_eq!(r.all_scores[1], ("o1".to_string(), 0.3));
        assert_eq!(r.all_scores[2].1, 0.0);

        let tie = verdict(&s, vec![det(2, 0.6), det(1, 0.6)]);
        assert_eq!(tie.predicted.as_deref(), Some("o1"));

        let zero = verdict(&s, vec![det(2, 0.0)]);
        assert_eq!(zero.predicted.as_deref(), Some("o2"));
        assert_eq!(zero.confidence, 0.0);
    }

    #[test]
    fn min_confidence_floor_filters() {
        let w = world(4, 0.0);
        let store = enrolled(&w, &[0, 1]);
        let dets = detect_objects(&w.render(0, 7).unwrap(), &store, &w, 0.6, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        assert!(dets.iter().all(|d| d.score >= 0.6));
    }

    #[test]
    fn reordering_the_store_keeps_the_prediction() {
        let w = world(5, 0.15);
        let store = enrolled(&w, &[0, 1, 2, 3, 4]);
        let rev = store.reordered(&[4, 3, 2, 1, 0]).unwrap();
        for c in 0..5 {
            let img = w.render(c, 42).unwrap();
            let a = classify_query(&img, &store, &w, &InferenceConfig::default()).unwrap();
            let b = classify_query(&img, &rev, &w, &InferenceConfig::default()).unwrap();
            assert_eq!(a.predicted, b.predicted);
            assert_eq!(a.confidence, b.confidence);
        }
    }

    #[test]
    fn record_json_shape() {
        let s = toy_store(2);
        let r = verdict(&s, vec![det(1, 0.5)]);
        let v = serde_json::to_value(QueryRecord::new("q.png", &r)).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "image": "q.png",
                "predicted": "o1",
                "confidence": 0.5,
                "scores": {"o0": 0.0, "o1": 0.5},
                "detections": [{"bbox": [0.0, 0.0, 4.0, 4.0], "class_index": 1, "score": 0.5}]
            })
        );
    }
}
