//! Enrollment: localize the main object, crop it with a margin, encode the
//! crop and its augmentations, and fold the raw embeddings into a prototype.

use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::adapter::{apply_transform, WhitenColorTransform};
use crate::augment::{apply_augmentation, augmentation_set, AugmentationKind, Image};
use crate::backend::Backend;
use crate::embedding::{aggregate_prototype, Embedding, EmbeddingBatch, UnitEmbedding};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::geometry::{crop_with_margin, nms, top1, BBox};

pub const STORE_VERSION: u64 = 1;

/// Allowed drift between a stored aggregate and the recomputed one.
const AGGREGATE_FILE_TOL: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnrollmentConfig {
    pub margin_px: f64,
    pub use_augmentations: bool,
    pub main_object_prompt: String,
    pub nms_iou_threshold: f64,
    pub min_confidence: f64,
    pub adapter_enabled: bool,
    /// Use the whole image when localization finds nothing.
    pub full_image_fallback: bool,
}

impl Default for EnrollmentConfig {
    fn default() -> Self {
        Self {
            margin_px: 15.0,
            use_augmentations: true,
            main_object_prompt: "main object".to_string(),
            nms_iou_threshold: 0.5,
            min_confidence: 0.05,
            adapter_enabled: false,
            full_image_fallback: false,
        }
    }
}

impl EnrollmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin_px >= 0.0 && self.margin_px.is_finite()) {
            return Err(Error::InvalidConfig(format!("margin {} must be >= 0", self.margin_px)));
        }
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "nms iou threshold {} outside (0, 1]",
                self.nms_iou_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::InvalidConfig(format!(
                "min confidence {} outside [0, 1]",
                self.min_confidence
            )));
        }
        Ok(())
    }
}

/// Source of provenance timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    /// Fixed clock from an RFC 3339 string.
    pub fn fixed(ts: &str) -> Result<Clock> {
        DateTime::parse_from_rfc3339(ts)
            .map(|t| Clock::Fixed(t.with_timezone(&Utc)))
            .map_err(|e| Error::InvalidConfig(format!("bad timestamp `{ts}`: {e}")))
    }

    pub fn epoch() -> Clock {
        Clock::Fixed(DateTime::<Utc>::UNIX_EPOCH)
    }

    pub fn now_iso(&self) -> String {
        let t = match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        };
        t.to_rfc3339_opts(SecondsFormat::Secs, true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub image_sha256: String,
    pub bbox: BBox,
    pub augmentation: AugmentationKind,
    pub adapted: bool,
    pub timestamp: String,
}

/// An enrolled object. `aggregated` always equals the normalized sum of
/// `raw`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPrototype {
    id: String,
    label: String,
    raw: Vec<Embedding>,
    aggregated: UnitEmbedding,
    provenance: Vec<Provenance>,
}

impl ObjectPrototype {
    pub fn new(
        id: impl Into<String>,
        label: impl Into<String>,
        raw: Vec<Embedding>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        if raw.len() != provenance.len() {
            return Err(Error::format(format!(
                "{} raw vectors but {} provenance records",
                raw.len(),
                provenance.len()
            )));
        }
        let aggregated = aggregate_prototype(&raw)?;
        Ok(Self {
            id: id.into(),
            label: label.into(),
            raw,
            aggregated,
            provenance,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn raw(&self) -> &[Embedding] {
        &self.raw
    }

    pub fn aggregated(&self) -> &UnitEmbedding {
        &self.aggregated
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn dim(&self) -> usize {
        self.aggregated.dim()
    }

    pub fn add_examples(&mut self, examples: Vec<(Embedding, Provenance)>) -> Result<()> {
        let mut raw = self.raw.clone();
        let mut prov = self.provenance.clone();
        for (e, p) in examples {
            raw.push(e);
            prov.push(p);
        }
        self.aggregated = aggregate_prototype(&raw)?;
        self.raw = raw;
        self.provenance = prov;
        Ok(())
    }

    pub fn remove_example(&mut self, index: usize) -> Result<()> {
        if index >= self.raw.len() {
            return Err(Error::ExampleIndex {
                id: self.id.clone(),
                index,
                len: self.raw.len(),
            });
        }
        if self.raw.len() == 1 {
            return Err(Error::EmptyPrototype);
        }
        let mut raw = self.raw.clone();
        raw.remove(index);
        self.aggregated = aggregate_prototype(&raw)?;
        self.raw = raw;
        self.provenance.remove(index);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeStore {
    dim: usize,
    prototypes: Vec<ObjectPrototype>,
    adapter_digest: Option<String>,
}

impl PrototypeStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            prototypes: Vec::new(),
            adapter_digest: None,
        }
    }

    pub fn version(&self) -> u64 {
        STORE_VERSION
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn prototypes(&self) -> &[ObjectPrototype] {
        &self.prototypes
    }

    pub fn adapter_digest(&self) -> Option<&str> {
        self.adapter_digest.as_deref()
    }

    pub fn get(&self, id: &str) -> Option<&ObjectPrototype> {
        self.prototypes.iter().find(|p| p.id == id)
    }

    fn index_of(&self, id: &str) -> Option<usize> {
        self.prototypes.iter().position(|p| p.id == id)
    }

    pub fn insert(&mut self, proto: ObjectPrototype) -> Result<()> {
        if proto.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: proto.dim(),
            });
        }
        if self.get(&proto.id).is_some() {
            return Err(Error::InvalidConfig(format!("duplicate object id `{}`", proto.id)));
        }
        self.prototypes.push(proto);
        Ok(())
    }

    /// Aggregated prototypes in store order.
    pub fn prompts(&self) -> Vec<UnitEmbedding> {
        self.prototypes.iter().map(|p| p.aggregated.clone()).collect()
    }

    /// Checks an adapter against the one the store was built with; an empty
    /// store adopts it.
    fn bind_adapter(&mut self, digest: Option<String>) -> Result<()> {
        if self.prototypes.is_empty() {
            self.adapter_digest = digest;
            return Ok(());
        }
        if self.adapter_digest != digest {
            return Err(Error::AdapterMismatch {
                store: self.adapter_digest.clone(),
                given: digest,
            });
        }
        Ok(())
    }

    pub fn remove_example(&mut self, object_id: &str, index: usize) -> Result<&ObjectPrototype> {
        let i = self
            .index_of(object_id)
            .ok_or_else(|| Error::UnknownObject(object_id.to_string()))?;
        self.prototypes[i].remove_example(index)?;
        Ok(&self.prototypes[i])
    }

    pub fn remove_object(&mut self, object_id: &str) -> Result<ObjectPrototype> {
        let i = self
            .index_of(object_id)
            .ok_or_else(|| Error::UnknownObject(object_id.to_string()))?;
        Ok(self.prototypes.remove(i))
    }

    /// Same prototypes in a different order (`order[k]` is the old index of
    /// the new `k`-th entry).
    pub fn reordered(&self, order: &[usize]) -> Result<PrototypeStore> {
        let mut seen = vec![false; self.len()];
        let mut prototypes = Vec::with_capacity(self.len());
        for &i in order {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidConfig("order is not a permutation".into()));
            }
            prototypes.push(self.prototypes[i].clone());
        }
        if prototypes.len() != self.len() {
            return Err(Error::InvalidConfig("order is not a permutation".into()));
        }
        Ok(PrototypeStore {
            dim: self.dim,
            prototypes,
            adapter_digest: self.adapter_digest.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), &StoreFile::from(self))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: StoreFile = read_json(path.as_ref())?;
        file.try_into()
    }
}

pub fn save_store(store: &PrototypeStore, path: impl AsRef<Path>) -> Result<()> {
    store.save(path)
}

pub fn load_store(path: impl AsRef<Path>) -> Result<PrototypeStore> {
    PrototypeStore::load(path)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreFile {
    version: u64,
    dim: usize,
    adapter_digest: Option<String>,
    objects: Vec<ObjectFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectFile {
    id: String,
    label: String,
    raw: Vec<Vec<f32>>,
    aggregated: Vec<f32>,
    provenance: Vec<Provenance>,
}

impl From<&PrototypeStore> for StoreFile {
    fn from(s: &PrototypeStore) -> Self {
        StoreFile {
            version: STORE_VERSION,
            dim: s.dim,
            adapter_digest: s.adapter_digest.clone(),
            objects: s
                .prototypes
                .iter()
                .map(|p| ObjectFile {
                    id: p.id.clone(),
                    label: p.label.clone(),
                    raw: p.raw.iter().map(|e| e.as_slice().to_vec()).collect(),
                    aggregated: p.aggregated.as_slice().to_vec(),
                    provenance: p.provenance.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<StoreFile> for PrototypeStore {
    type Error = Error;

    fn try_from(f: StoreFile) -> Result<Self> {
        if f.version != STORE_VERSION {
            return Err(Error::Version {
                found: f.version,
                expected: STORE_VERSION,
            });
        }
        let mut store = PrototypeStore {
            dim: f.dim,
            prototypes: Vec::with_capacity(f.objects.len()),
            adapter_digest: f.adapter_digest,
        };
        for o in f.objects {
            let wrap = |e: Error| Error::format(format!("object `{}`: {e}", o.id));
            if o.aggregated.len() != f.dim || o.raw.iter().any(|r| r.len() != f.dim) {
                return Err(Error::format(format!(
                    "object `{}` does not match store dim {}",
                    o.id, f.dim
                )));
            }
            let raw = o
                .raw
                .into_iter()
                .map(Embedding::new)
                .collect::<Result<Vec<_>>>()
                .map_err(wrap)?;
            let proto = ObjectPrototype::new(o.id.clone(), o.label, raw, o.provenance).map_err(wrap)?;
            let drift = proto
                .aggregated
                .as_slice()
                .iter()
                .zip(&o.aggregated)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            if !(drift <= AGGREGATE_FILE_TOL) {
                return Err(Error::format(format!(
                    "object `{}`: stored aggregate differs from its raw vectors by {drift:e}",
                    o.id
                )));
            }
            store.insert(proto).map_err(|e| match e {
                Error::InvalidConfig(m) => Error::Format(m),
                other => other,
            })?;
        }
        Ok(store)
    }
}

/// Box of the most salient object according to the main-object prompt.
pub fn locate_main_object(img: &Image, backend: &dyn Backend, cfg: &EnrollmentConfig) -> Result<BBox> {
    let prompt = backend.encode_text(&cfg.main_object_prompt)?;
    let dets = backend.detect(img, std::slice::from_ref(&prompt))?;
    let kept: Vec<_> = dets.into_iter().filter(|d| d.score >= cfg.min_confidence).collect();
    Ok(top1(&nms(&kept, cfg.nms_iou_threshold))?.bbox)
}

/// Everything one enrolled image contributes, before it touches a store.
#[derive(Debug, Clone)]
pub struct ImageExamples {
    pub crop: BBox,
    pub examples: Vec<(Embedding, Provenance)>,
}

/// Runs the localization, crop, augmentation, encoding and optional
/// adapter steps for one image.
pub fn encode_image_examples(
    img: &Image,
    backend: &dyn Backend,
    cfg: &EnrollmentConfig,
    adapter: Option<&WhitenColorTransform>,
    clock: &Clock,
) -> Result<ImageExamples> {
    cfg.validate()?;
    let adapter = match (cfg.adapter_enabled, adapter) {
        (true, None) => return Err(Error::InvalidConfig("adapter enabled but no transform supplied".into())),
        (true, Some(t)) => Some(t),
        (false, _) => None,
    };
    let dim = backend.descriptor().dim;
    if let Some(t) = adapter {
        if t.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: t.dim(),
            });
        }
    }
    let bbox = match locate_main_object(img, backend, cfg) {
        Ok(b) => b,
        Err(Error::NoDetection) if cfg.full_image_fallback => {
            log::warn!("no main object found; falling back to the full image");
            BBox::new(0.0, 0.0, f64::from(img.width()), f64::from(img.height()))?
        }
        Err(e) => return Err(e),
    };
    let crop_box = crop_with_margin(&bbox, cfg.margin_px, img.dims())?;
    let crop = img.crop(crop_box.to_pixel_rect(img.dims())?)?;
    let kinds = augmentation_set(cfg.use_augmentations);
    let mut encoded = Vec::with_capacity(kinds.len());
    for &k in &kinds {
        let e = backend.encode_image(&apply_augmentation(&crop, k))?;
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: e.dim(),
            });
        }
        encoded.push(e.to_embedding());
    }
    let raw: Vec<Embedding> = match adapter {
        Some(t) => {
            let adapted = apply_transform(t, &EmbeddingBatch::from_rows(dim, &encoded)?)?;
            adapted
                .iter_rows()
                .map(|r| Embedding::new(r.to_vec()))
                .collect::<Result<_>>()?
        }
        None => encoded,
    };
    let digest = img.digest();
    let timestamp = clock.now_iso();
    let examples = raw
        .into_iter()
        .zip(kinds)
        .map(|(e, k)| {
            let p = Provenance {
                image_sha256: digest.clone(),
                bbox: crop_box,
                augmentation: k,
                adapted: adapter.is_some(),
                timestamp: timestamp.clone(),
            };
            (e, p)
        })
        .collect();
    Ok(ImageExamples {
        crop: crop_box,
        examples,
    })
}

/// Enrolls one image under `object_id`, creating the object (labelled
/// `label`, or the id) when missing.
#[allow(clippy::too_many_arguments)]
pub fn enroll_image<'s>(
    store: &'s mut PrototypeStore,
    object_id: &str,
    label: Option<&str>,
    img: &Image,
    backend: &dyn Backend,
    cfg: &EnrollmentConfig,
    adapter: Option<&WhitenColorTransform>,
    clock: &Clock,
) -> Result<&'s ObjectPrototype> {
    if backend.descriptor().dim != store.dim {
        return Err(Error::DimensionMismatch {
            expected: store.dim,
            found: backend.descriptor().dim,
        });
    }
    let digest = if cfg.adapter_enabled {
        adapter.map(|t| t.digest())
    } else {
        None
    };
    if !store.is_empty() && store.adapter_digest != digest {
        return Err(Error::AdapterMismatch {
            store: store.adapter_digest.clone(),
            given: digest,
        });
    }
    let new = encode_image_examples(img, backend, cfg, adapter, clock)?;
    store.bind_adapter(digest)?;
    let idx = match store.index_of(object_id) {
        Some(i) => {
            store.prototypes[i].add_examples(new.examples)?;
            i
        }
        None => {
            let (raw, prov) = new.examples.into_iter().unzip();
            let proto = ObjectPrototype::new(object_id, label.unwrap_or(object_id), raw, prov)?;
            store.insert(proto)?;
            store.len() - 1
        }
    };
    Ok(&store.prototypes[idx])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockWorld, MockWorldConfig, BACKGROUND_RGB};
    use crate::embedding::l2_normalize;
    use crate::geometry::PixelRect;

    fn world() -> MockWorld {
        MockWorld::new(MockWorldConfig {
            num_classes: 5,
            dim: 64,
            seed: 3,
            ..MockWorldConfig::default()
        })
        .unwrap()
    }

    fn prov(i: usize) -> Provenance {
        Provenance {
            image_sha256: format!("{i:064x}"),
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            augmentation: AugmentationKind::Identity,
            adapted: false,
            timestamp: "1970-01-01T00:00:00Z".into(),
        }
    }

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn locate_on_render_and_blank() {
        let w = world();
        let cfg = EnrollmentConfig::default();
        let b = locate_main_object(&w.render(2, 0).unwrap(), &w, &cfg).unwrap();
        let want = w.config().object_rect().to_bbox();
        assert!((b.x0() - want.x0()).abs() <= 1.0 && (b.x1() - want.x1()).abs() <= 1.0);
        assert!((b.y0() - want.y0()).abs() <= 1.0 && (b.y1() - want.y1()).abs() <= 1.0);

        let blank = Image::filled(96, 96, BACKGROUND_RGB).unwrap();
        assert!(matches!(locate_main_object(&blank, &w, &cfg), Err(Error::NoDetection)));
    }

    #[test]
    fn locate_picks_the_larger_of_two_objects() {
        let w = world();
        let mut img = Image::filled(96, 96, BACKGROUND_RGB).unwrap();
        let big = PixelRect {
            x0: 40,
            y0: 30,
            x1: 90,
            y1: 80,
        };
        w.paint_object(
            &mut img,
            1,
            0,
            PixelRect {
                x0: 2,
                y0: 2,
                x1: 20,
                y1: 20,
            },
        )
        .unwrap();
        w.paint_object(&mut img, 3, 0, big).unwrap();
        let b = locate_main_object(&img, &w, &EnrollmentConfig::default()).unwrap();
        assert_eq!(b, big.to_bbox());
    }

    #[test]
    fn enroll_counts_and_provenance() {
        let w = world();
        let mut store = PrototypeStore::new(64);
        let clock = Clock::epoch();
        let cfg = EnrollmentConfig::default();
        let p = enroll_image(
            &mut store,
            "mug",
            None,
            &w.render(1, 0).unwrap(),
            &w,
            &cfg,
            None,
            &clock,
        )
        .unwrap();
        assert_eq!(p.raw().len(), 4);
        assert_eq!(p.label(), "mug");
        let kinds: Vec<_> = p.provenance().iter().map(|p| p.augmentation).collect();
        assert_eq!(kinds, AugmentationKind::ALL.to_vec());
        // 48-pixel object at 24 plus a 15-pixel margin.
        assert_eq!(p.provenance()[0].bbox, BBox::new(9.0, 9.0, 87.0, 87.0).unwrap());
        assert_eq!(p.provenance()[0].timestamp, "1970-01-01T00:00:00Z");

        let off = EnrollmentConfig {
            use_augmentations: false,
            ..cfg
        };
        let p = enroll_image(
            &mut store,
            "mug",
            None,
            &w.render(1, 1).unwrap(),
            &w,
            &off,
            None,
            &clock,
        )
        .unwrap();
        assert_eq!(p.raw().len(), 5);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn enroll_rejects_dim_mismatch_and_blank() {
        let w = world();
        let mut store = PrototypeStore::new(32);
        let cfg = EnrollmentConfig::default();
        let clock = Clock::epoch();
        let img = w.render(0, 0).unwrap();
        assert!(matches!(
            enroll_image(&mut store, "a", None, &img, &w, &cfg, None, &clock),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut store = PrototypeStore::new(64);
        let blank = Image::filled(96, 96, BACKGROUND_RGB).unwrap();
        assert!(matches!(
            enroll_image(&mut store, "a", None, &blank, &w, &cfg, None, &clock),
            Err(Error::NoDetection)
        ));
        assert!(store.is_empty());

        let fallback = EnrollmentConfig {
            full_image_fallback: true,
            ..EnrollmentConfig::default()
        };
        let p = enroll_image(&mut store, "a", None, &blank, &w, &fallback, None, &clock).unwrap();
        assert_eq!(p.provenance()[0].bbox, BBox::new(0.0, 0.0, 96.0, 96.0).unwrap());
    }

    #[test]
    fn remove_example_cases() {
        let a = emb(&[0.3, -0.4, 0.5]);
        let b = emb(&[0.1, 0.9, -0.2]);
        let mut p = ObjectPrototype::new("x", "x", vec![a.clone(), b.clone()], vec![prov(0), prov(1)]).unwrap();
        let before = p.aggregated().clone();
        p.remove_example(1).unwrap();
        p.add_examples(vec![(b, prov(1))]).unwrap();
        for (x, y) in p.aggregated().as_slice().iter().zip(before.as_slice()) {
            assert!((x - y).abs() <= 1e-6);
        }

        let mut single = ObjectPrototype::new("s", "s", vec![a], vec![prov(0)]).unwrap();
        assert!(matches!(single.remove_example(0), Err(Error::EmptyPrototype)));
        assert!(matches!(single.remove_example(3), Err(Error::ExampleIndex { .. })));

        let mut orth = ObjectPrototype::new(
            "o",
            "o",
            vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])],
            vec![prov(0), prov(1)],
        )
        .unwrap();
        orth.remove_example(0).unwrap();
        assert_eq!(orth.aggregated().as_slice(), &[0.0, 1.0]);

        let mut store = PrototypeStore::new(2);
        store.insert(orth).unwrap();
        assert!(matches!(store.remove_example("zz", 0), Err(Error::UnknownObject(_))));
    }

    fn two_object_store() -> PrototypeStore {
        let mut s = PrototypeStore::new(3);
        s.insert(
            ObjectPrototype::new(
                "a",
                "Alpha",
                vec![emb(&[0.1, 0.2, 0.3]), emb(&[1.0 / 3.0, -0.7, 1e-8])],
                vec![prov(0), prov(1)],
            )
            .unwrap(),
        )
        .unwrap();
        s.insert(ObjectPrototype::new("b", "Beta", vec![emb(&[-0.5, 0.25, 0.125])], vec![prov(2)]).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        let s = two_object_store();
        s.save(&path).unwrap();
        let back = PrototypeStore::load(&path).unwrap();
        assert_eq!(back, s);
        let bits = |p: &ObjectPrototype| {
            p.raw()
                .iter()
                .flat_map(|e| e.as_slice().iter().map(|v| v.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&back.prototypes()[0]), bits(&s.prototypes()[0]));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"version\": 1"));
        assert!(text.contains("\"adapter_digest\": null"));
    }

    #[test]
    fn store_load_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        let s = two_object_store();
        let good = serde_json::to_value(StoreFile::from(&s)).unwrap();

        let mut v = good.clone();
        v["objects"][1]["aggregated"] = serde_json::json!([1.0, 0.0, 0.0]);
        std::fs::write(&path, v.to_string()).unwrap();
        match PrototypeStore::load(&path) {
            Err(Error::Format(m)) => assert!(m.contains("`b`"), "{m}"),
            other => panic!("expected format error, got {other:?}"),
        }

        let mut v = good.clone();
        v["objects"][1]["raw"] = serde_json::json!([[0.5, 0.5]]);
        v["objects"][1]["aggregated"] = serde_json::json!([0.70710677, 0.70710677]);
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(PrototypeStore::load(&path), Err(Error::Format(_))));

        let mut v = good.clone();
        v["version"] = serde_json::json!(7);
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(
            PrototypeStore::load(&path),
            Err(Error::Version { found: 7, .. })
        ));

        let mut v = good;
        v["objects"][1]["id"] = serde_json::json!("a");
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(PrototypeStore::load(&path), Err(Error::Format(_))));

        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(PrototypeStore::load(&path), Err(Error::Format(_))));
        assert!(matches!(
            PrototypeStore::load(dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn adapter_digest_is_bound() {
        use crate::adapter::{build_transform, estimate_stats};
        let w = world();
        let corpus = w.image_corpus(200, 1).unwrap();
        let stats = estimate_stats(&corpus).unwrap();
        let t = build_transform(&stats, &stats, 1e-5).unwrap();
        let clock = Clock::epoch();
        let on = EnrollmentConfig {
            adapter_enabled: true,
            ..EnrollmentConfig::default()
        };
        let mut store = PrototypeStore::new(64);
        let img = w.render(0, 0).unwrap();
        assert!(enroll_image(&mut store, "a", None, &img, &w, &on, None, &clock).is_err());
        let p = enroll_image(&mut store, "a", None, &img, &w, &on, Some(&t), &clock).unwrap();
        assert!(p.provenance().iter().all(|p| p.adapted));
        assert_eq!(store.adapter_digest(), Some(t.digest().as_str()));
        let plain = EnrollmentConfig::default();
        assert!(matches!(
            enroll_image(&mut store, "b", None, &img, &w, &plain, None, &clock),
            Err(Error::AdapterMismatch { .. })
        ));
    }

    #[test]
    fn aggregate_tracks_raw_after_mutations() {
        let w = world();
        let mut store = PrototypeStore::new(64);
        let clock = Clock::epoch();
        let cfg = EnrollmentConfig::default();
        for i in 0..3 {
            enroll_image(&mut store, "o", None, &w.render(2, i).unwrap(), &w, &cfg, None, &clock).unwrap();
        }
        store.remove_example("o", 5).unwrap();
        store.remove_example("o", 0).unwrap();
        let p = store.get("o").unwrap();
        assert_eq!(p.raw().len(), 10);
        let want = aggregate_prototype(p.raw()).unwrap();
        assert_eq!(p.aggregated(), &want);
        let _ = l2_normalize(want.as_slice()).unwrap();
    }
}
