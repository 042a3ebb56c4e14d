//! Backend served from files produced by an out-of-process model runner.
//!
//! Directory layout:
//!
//! ```text
//! descriptor.json            {"name", "dim", "model_size"}
//! image_embeddings.emb1      one row per encoded image
//! image_keys.json            {"keys": [<image digest>, ...]}
//! text_embeddings.emb1       one row per encoded string
//! text_keys.json             {"keys": [<text>, ...]}
//! detections/<image digest>_<prompts digest>.json
//!                            [{"bbox": [x0,y0,x1,y1], "class_index": i, "score": s}, ...]
//! ```
//!
//! Image digests are [`Image::digest`] (SHA-256 over little-endian width,
//! height and RGB bytes); the prompts digest is SHA-256 over the
//! little-endian `f32` bytes of all prompts in order.
//!
//! When a request directory is configured, every miss is recorded there so
//! the runner can fill the gap: missing images as `images/<digest>.png`,
//! missing detections as `detect/<digest>.png` plus
//! `detect/<prompts digest>.emb1` with the pair appended to
//! `detect/pairs.txt` as `<digest> <prompts digest>`, missing strings
//! appended to `texts.txt`.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::emb1::{self, read_embedding_file_with_dim};
use super::{validate_detections, Backend, BackendDescriptor};
use crate::augment::Image;
use crate::embedding::{EmbeddingBatch, UnitEmbedding};
use crate::error::{Error, Result};
use crate::fsutil::read_json;
use crate::geometry::Detection;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyFile {
    pub keys: Vec<String>,
}

pub fn prompts_digest(prompts: &[UnitEmbedding]) -> String {
    let mut h = Sha256::new();
    for p in prompts {
        for v in p.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn detection_file_name(image_digest: &str, prompts_digest: &str) -> String {
    format!("{image_digest}_{prompts_digest}.json")
}

pub struct ExternalFiles {
    root: PathBuf,
    descriptor: BackendDescriptor,
    images: HashMap<String, UnitEmbedding>,
    texts: HashMap<String, UnitEmbedding>,
    requests: Option<PathBuf>,
    request_lock: Mutex<()>,
}

fn load_table(root: &Path, emb: &str, keys: &str, dim: usize) -> Result<HashMap<String, UnitEmbedding>> {
    let emb_path = root.join(emb);
    let key_path = root.join(keys);
    if !emb_path.exists() && !key_path.exists() {
        return Ok(HashMap::new());
    }
    let batch = read_embedding_file_with_dim(&emb_path, dim)?;
    let keys: KeyFile = read_json(&key_path)?;
    if keys.keys.len() != batch.rows() {
        return Err(Error::format(format!(
            "{} lists {} keys for {} rows",
            key_path.display(),
            keys.keys.len(),
            batch.rows()
        )));
    }
    let mut out = HashMap::with_capacity(keys.keys.len());
    for (k, row) in keys.keys.into_iter().zip(batch.iter_rows()) {
        // Runners may export unnormalized rows.
        let unit = crate::embedding::l2_normalize(row)?;
        if out.insert(k.clone(), unit).is_some() {
            return Err(Error::format(format!("duplicate key `{k}` in {}", key_path.display())));
        }
    }
    Ok(out)
}

impl ExternalFiles {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let descriptor: BackendDescriptor = read_json(&root.join("descriptor.json"))?;
        let images = load_table(&root, "image_embeddings.emb1", "image_keys.json", descriptor.dim)?;
        let texts = load_table(&root, "text_embeddings.emb1", "text_keys.json", descriptor.dim)?;
        Ok(Self {
            root,
            descriptor,
            images,
            texts,
            requests: None,
            request_lock: Mutex::new(()),
        })
    }

    /// Records misses under `dir` (created on first miss).
    pub fn with_request_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.requests = Some(dir.into());
        self
    }

    fn record(&self, f: impl FnOnce(&Path) -> std::io::Result<()>) {
        if let Some(dir) = &self.requests {
            let _guard = self.request_lock.lock().unwrap_or_else(|e| e.into_inner());
            if let Err(e) = f(dir) {
                log::warn!("could not record backend request in {}: {e}", dir.display());
            }
        }
    }

    fn record_image(&self, sub: &str, img: &Image, digest: &str) {
        self.record(|dir| {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d)?;
            img.save(d.join(format!("{digest}.png")))
                .map_err(|e| std::io::Error::other(e.to_string()))
        });
    }
}

impl Backend for ExternalFiles {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn encode_text(&self, text: &str) -> Result<UnitEmbedding> {
        if let Some(e) = self.texts.get(text) {
            return Ok(e.clone());
        }
        self.record(|dir| {
            std::fs::create_dir_all(dir)?;
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("texts.txt"))?;
            writeln!(f, "{text}")
        });
        Err(Error::BackendFailure(format!("no text embedding for `{text}`")))
    }

    fn encode_image(&self, img: &Image) -> Result<UnitEmbedding> {
        let digest = img.digest();
        if let Some(e) = self.images.get(&digest) {
            return Ok(e.clone());
        }
        self.record_image("images", img, &digest);
        Err(Error::BackendFailure(format!("no image embedding for digest {digest}")))
    }

    fn detect(&self, img: &Image, prompts: &[UnitEmbedding]) -> Result<Vec<Detection>> {
        let digest = img.digest();
        let pd = prompts_digest(prompts);
        let path = self.root.join("detections").join(detection_file_name(&digest, &pd));
        if !path.exists() {
            self.record_image("detect", img, &digest);
            self.record(|dir| {
                let rows: Vec<&[f32]> = prompts.iter().map(|p| p.as_slice()).collect();
                let batch = EmbeddingBatch::from_rows(self.descriptor.dim, &rows)
                    .map_err(|e| std::io::Error::other(e.to_string()))?;
                let bytes = emb1::encode(&batch).map_err(|e| std::io::Error::other(e.to_string()))?;
                std::fs::write(dir.join("detect").join(format!("{pd}.emb1")), bytes)?;
                let mut f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join("detect").join("pairs.txt"))?;
                writeln!(f, "{digest} {pd}")
            });
            return Err(Error::BackendFailure(format!(
                "no detections for image {digest} with prompts {pd}"
            )));
        }
        let dets: Vec<Detection> = read_json(&path)?;
        validate_detections(&dets, prompts.len())?;
        Ok(dets)
    }
}

fn read_table(root: &Path, emb: &str, keys: &str, dim: usize) -> Result<(Vec<String>, Vec<f32>)> {
    let emb_path = root.join(emb);
    if !emb_path.exists() {
        return Ok((Vec::new(), Vec::new()));
    }
    let batch = read_embedding_file_with_dim(&emb_path, dim)?;
    let keys: KeyFile = read_json(&root.join(keys))?;
    Ok((keys.keys, batch.into_vec()))
}

fn write_table(root: &Path, emb: &str, keys: &str, dim: usize, table: (Vec<String>, Vec<f32>)) -> Result<()> {
    let (k, data) = table;
    emb1::write_embedding_file(root.join(emb), &EmbeddingBatch::new(dim, data)?)?;
    crate::fsutil::write_json(&root.join(keys), &KeyFile { keys: k })
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines: Vec<String> = text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect();
    lines.sort();
    lines.dedup();
    Ok(lines)
}

/// Plays the model runner: answers every request recorded under
/// `requests` with `backend`, merges the answers into the files under
/// `root` (creating them when missing) and empties `requests`. Returns the
/// number of answered requests.
pub fn answer_requests(root: &Path, requests: &Path, backend: &dyn Backend) -> Result<usize> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let desc_path = root.join("descriptor.json");
    if !desc_path.exists() {
        crate::fsutil::write_json(&desc_path, backend.descriptor())?;
    }
    let desc: BackendDescriptor = read_json(&desc_path)?;
    if desc.dim != backend.descriptor().dim {
        return Err(Error::DimensionMismatch {
            expected: desc.dim,
            found: backend.descriptor().dim,
        });
    }
    let dim = desc.dim;
    let mut answered = 0;

    let mut images = read_table(root, "image_embeddings.emb1", "image_keys.json", dim)?;
    let img_dir = requests.join("images");
    if img_dir.exists() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&img_dir)
            .map_err(|e| Error::io(&img_dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&img_dir, err)))
            .collect::<Result<_>>()?;
        files.sort();
        for f in files {
            let img = Image::open(&f)?;
            let digest = img.digest();
            if !images.0.contains(&digest) {
                images.1.extend_from_slice(backend.encode_image(&img)?.as_slice());
                images.0.push(digest);
                answered += 1;
            }
        }
    }
    write_table(root, "image_embeddings.emb1", "image_keys.json", dim, images)?;

    let mut texts = read_table(root, "text_embeddings.emb1", "text_keys.json", dim)?;
    for t in read_lines(&requests.join("texts.txt"))? {
        if !texts.0.contains(&t) {
            texts.1.extend_from_slice(backend.encode_text(&t)?.as_slice());
            texts.0.push(t);
            answered += 1;
        }
    }
    write_table(root, "text_embeddings.emb1", "text_keys.json", dim, texts)?;

    let det_dir = root.join("detections");
    std::fs::create_dir_all(&det_dir).map_err(|e| Error::io(&det_dir, e))?;
    let req_det = requests.join("detect");
    for pair in read_lines(&req_det.join("pairs.txt"))? {
        let (digest, pd) = pair
            .split_once(' ')
            .ok_or_else(|| Error::format(format!("malformed request pair `{pair}`")))?;
        let out = det_dir.join(detection_file_name(digest, pd));
        if out.exists() {
            continue;
        }
        let img = Image::open(req_det.join(format!("{digest}.png")))?;
        let batch = read_embedding_file_with_dim(req_det.join(format!("{pd}.emb1")), dim)?;
        let prompts: Vec<UnitEmbedding> = batch
            .iter_rows()
            .map(|r| UnitEmbedding::from_unit(r.to_vec()))
            .collect::<Result<_>>()?;
        if img.digest() != digest || prompts_digest(&prompts) != pd {
            return Err(Error::format(format!("request pair `{pair}` does not match its files")));
        }
        crate::fsutil::write_json(&out, &backend.detect(&img, &prompts)?)?;
        answered += 1;
    }
    if requests.exists() {
        std::fs::remove_dir_all(requests).map_err(|e| Error::io(requests, e))?;
    }
    Ok(answered)
}
