//! Deterministic synthetic stand-in for a contrastive encoder plus an
//! open-vocabulary detector.
//!
//! Each class owns a latent direction (mutually orthonormal) and a palette
//! color. Renders are a gray canvas with one centered rectangle of the class
//! color. The image encoder reads the mean color of the central third of the
//! image, maps it to the nearest class color, and returns that class latent
//! plus Gaussian noise seeded by a digest of the pixels. Orientation
//! augmentations therefore keep the class but change the noise draw.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendDescriptor, ModelSize};
use crate::augment::Image;
use crate::embedding::{l2_normalize, Embedding, EmbeddingBatch, UnitEmbedding};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection, PixelRect};
use crate::seed;

pub const BACKGROUND_RGB: [u8; 3] = [128, 128, 128];

/// Pixels farther than this (Euclidean RGB) from the background are foreground.
pub const FOREGROUND_DISTANCE: f64 = 48.0;

/// A mean color farther than this from every class color encodes as background.
pub const MATCH_RADIUS: f64 = 60.0;

/// Score the saliency prompt gives to the largest foreground region.
pub const SALIENCY_SCORE: f64 = 0.99;

/// Prompt text mapped to the saliency latent.
pub const MAIN_OBJECT_PROMPT: &str = "main object";

const MAX_PIXEL_NOISE: f64 = 24.0;
const MIN_REGION_PIXELS: usize = 4;
const PALETTE_LEVELS: [u8; 4] = [0, 85, 170, 255];
const MIN_PALETTE_GRAY_DISTANCE: f64 = 100.0;

/// Per-component encoder noise used for each model-size preset.
pub fn noise_preset(size: ModelSize) -> f64 {
    match size {
        ModelSize::S => 0.24,
        ModelSize::M => 0.20,
        ModelSize::L => 0.16,
    }
}

/// Class colors: RGB levels {0, 85, 170, 255}³ in lexicographic order,
/// excluding those near the gray background.
pub fn palette() -> Vec<[u8; 3]> {
    let mut out = Vec::new();
    for r in PALETTE_LEVELS {
        for g in PALETTE_LEVELS {
            for b in PALETTE_LEVELS {
                if rgb_distance([r, g, b].map(f64::from), BACKGROUND_RGB.map(f64::from)) >= MIN_PALETTE_GRAY_DISTANCE {
                    out.push([r, g, b]);
                }
            }
        }
    }
    out
}

pub fn palette_capacity() -> usize {
    palette().len()
}

fn rgb_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockWorldConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub image_size: u32,
    pub object_fraction: f64,
    /// `(a, b)`: class `a` is rendered with the color of class `b`.
    pub color_aliases: Vec<(usize, usize)>,
}

impl Default for MockWorldConfig {
    fn default() -> Self {
        Self {
            num_classes: 19,
            dim: 512,
            noise_sigma: 0.0,
            seed: 0,
            image_size: 96,
            object_fraction: 0.5,
            color_aliases: Vec::new(),
        }
    }
}

impl MockWorldConfig {
    pub fn for_size(size: ModelSize) -> Self {
        Self {
            noise_sigma: noise_preset(size),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes > self.dim {
            return Err(Error::TooManyClasses {
                classes: self.num_classes,
                dim: self.dim,
            });
        }
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.num_classes > palette_capacity() {
            return bad(format!(
                "num_classes {} exceeds palette capacity {}",
                self.num_classes,
                palette_capacity()
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("invalid noise_sigma {}", self.noise_sigma));
        }
        if !(self.object_fraction > 0.0 && self.object_fraction < 1.0) {
            return bad(format!("object_fraction {} outside (0, 1)", self.object_fraction));
        }
        if self.image_size < 8 {
            return bad(format!("image_size {} below 8 pixels", self.image_size));
        }
        for &(a, b) in &self.color_aliases {
            if a >= self.num_classes || b >= self.num_classes {
                return bad(format!("color alias ({a}, {b}) out of range"));
            }
        }
        Ok(())
    }

    /// Analytic box of the rendered object.
    pub fn object_rect(&self) -> PixelRect {
        let size = self.image_size;
        let side = ((self.object_fraction * f64::from(size)).round() as u32).clamp(1, size);
        let x0 = (size - side) / 2;
        PixelRect {
            x0,
            y0: x0,
            x1: x0 + side,
            y1: x0 + side,
        }
    }

    /// Per-channel amplitude of the uniform pixel noise.
    pub fn pixel_noise_amplitude(&self) -> u8 {
        (self.noise_sigma * 100.0).round().min(MAX_PIXEL_NOISE) as u8
    }
}

fn gaussian_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Gram-Schmidt (applied twice) of `v` against `basis`; `None` if `v` lies
/// in their span.
fn orthonormalize(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..2 {
        for b in basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-8).then(|| v.into_iter().map(|x| x / n).collect())
}

fn to_unit(v: &[f64]) -> UnitEmbedding {
    let f: Vec<f32> = v.iter().map(|&x| x as f32).collect();
    l2_normalize(&f).expect("generated vectors are non-degenerate")
}

struct Latents {
    classes: Vec<UnitEmbedding>,
    background: UnitEmbedding,
    saliency: UnitEmbedding,
}

fn generate_latents(cfg: &MockWorldConfig) -> Result<Latents> {
    if cfg.num_classes > cfg.dim {
        return Err(Error::TooManyClasses {
            classes: cfg.num_classes,
            dim: cfg.dim,
        });
    }
    let mut rng = seed::rng(seed::mix(cfg.seed, &[0x1a7e]));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes + 2);
    // Classes first, then background and saliency while room remains.
    for _ in 0..cfg.num_classes + 2 {
        loop {
            let v = gaussian_vector(&mut rng, cfg.dim);
            if basis.len() < cfg.dim {
                if let Some(u) = orthonormalize(v, &basis) {
                    basis.push(u);
                    break;
                }
            } else {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                basis.push(v.into_iter().map(|x| x / n).collect());
                break;
            }
        }
    }
    let mut units: Vec<UnitEmbedding> = basis.iter().map(|v| to_unit(v)).collect();
    let saliency = units.pop().expect("saliency latent");
    let background = units.pop().expect("background latent");
    Ok(Latents {
        classes: units,
        background,
        saliency,
    })
}

/// The orthonormal class latents of a mock world.
pub fn mock_class_latents(cfg: &MockWorldConfig) -> Result<Vec<UnitEmbedding>> {
    Ok(generate_latents(cfg)?.classes)
}

pub struct MockWorld {
    cfg: MockWorldConfig,
    descriptor: BackendDescriptor,
    latents: Latents,
    colors: Vec<[u8; 3]>,
}

impl std::fmt::Debug for MockWorld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockWorld")
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

impl MockWorld {
    pub fn new(cfg: MockWorldConfig) -> Result<Self> {
        Self::with_size(cfg, ModelSize::L)
    }

    pub fn with_size(cfg: MockWorldConfig, model_size: ModelSize) -> Result<Self> {
        cfg.validate()?;
        let latents = generate_latents(&cfg)?;
        let pal = palette();
        let mut colors: Vec<[u8; 3]> = pal[..cfg.num_classes].to_vec();
        for &(a, b) in &cfg.color_aliases {
            colors[a] = pal[b];
        }
        let descriptor = BackendDescriptor {
            name: format!("mock-{model_size}"),
            dim: cfg.dim,
            model_size,
        };
        Ok(Self {
            cfg,
            descriptor,
            latents,
            colors,
        })
    }

    /// World with the noise preset of `size`.
    pub fn preset(size: ModelSize, seed: u64) -> Result<Self> {
        let cfg = MockWorldConfig {
            seed,
            ..MockWorldConfig::for_size(size)
        };
        Self::with_size(cfg, size)
    }

    pub fn config(&self) -> &MockWorldConfig {
        &self.cfg
    }

    pub fn class_latent(&self, class: usize) -> &UnitEmbedding {
        &self.latents.classes[class]
    }

    pub fn class_latents(&self) -> &[UnitEmbedding] {
        &self.latents.classes
    }

    pub fn saliency_latent(&self) -> &UnitEmbedding {
        &self.latents.saliency
    }

    pub fn background_latent(&self) -> &UnitEmbedding {
        &self.latents.background
    }

    pub fn class_color(&self, class: usize) -> [u8; 3] {
        self.colors[class]
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.cfg.num_classes {
            return Err(Error::InvalidConfig(format!(
                "class {class} out of range for {} classes",
                self.cfg.num_classes
            )));
        }
        Ok(())
    }

    /// Paints an object of `class` into `rect` of `canvas`, with pixel noise
    /// seeded by `(world seed, class, instance_seed)`.
    pub fn paint_object(&self, canvas: &mut Image, class: usize, instance_seed: u64, rect: PixelRect) -> Result<()> {
        self.check_class(class)?;
        if rect.x1 > canvas.width() || rect.y1 > canvas.height() || rect.width() == 0 || rect.height() == 0 {
            return Err(Error::EmptyCrop);
        }
        let color = self.colors[class];
        let amp = i16::from(self.cfg.pixel_noise_amplitude());
        let mut rng = seed::rng(seed::mix(self.cfg.seed, &[0x9a1e7, class as u64, instance_seed]));
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                let px = if amp == 0 {
                    color
                } else {
                    color.map(|c| (i16::from(c) + rng.random_range(-amp..=amp)).clamp(0, 255) as u8)
                };
                canvas.put(x, y, px);
            }
        }
        Ok(())
    }

    /// Gray square canvas with one centered object.
    pub fn render(&self, class: usize, instance_seed: u64) -> Result<Image> {
        let s = self.cfg.image_size;
        let mut img = Image::filled(s, s, BACKGROUND_RGB)?;
        self.paint_object(&mut img, class, instance_seed, self.cfg.object_rect())?;
        Ok(img)
    }

    /// Class whose color is nearest the mean of the central third, or `None`
    /// for background.
    pub fn match_class(&self, img: &Image) -> Option<usize> {
        let (w, h) = (img.width(), img.height());
        let (x0, x1) = (w / 3, (w - w / 3).max(w / 3 + 1));
        let (y0, y1) = (h / 3, (h - h / 3).max(h / 3 + 1));
        let mut sum = [0.0f64; 3];
        for y in y0..y1 {
            for x in x0..x1 {
                let p = img.get(x, y);
                for c in 0..3 {
                    sum[c] += f64::from(p[c]);
                }
            }
        }
        let count = f64::from((x1 - x0) * (y1 - y0));
        let mean = sum.map(|s| s / count);
        let bg = rgb_distance(mean, BACKGROUND_RGB.map(f64::from));
        let (best, dist) = self
            .colors
            .iter()
            .enumerate()
            .map(|(i, c)| (i, rgb_distance(mean, c.map(f64::from))))
            .fold(
                (usize::MAX, f64::INFINITY),
                |acc, cur| if cur.1 < acc.1 { cur } else { acc },
            );
        (dist <= MATCH_RADIUS && dist < bg).then_some(best)
    }

    fn noisy(&self, base: &UnitEmbedding, noise_seed: u64) -> UnitEmbedding {
        if self.cfg.noise_sigma == 0.0 {
            return l2_normalize(base.as_slice()).expect("unit latent");
        }
        let mut rng = seed::rng(noise_seed);
        let sigma = self.cfg.noise_sigma;
        let v: Vec<f32> = base
            .as_slice()
            .iter()
            .map(|&x| {
                let n: f64 = rng.sample(StandardNormal);
                (f64::from(x) + sigma * n) as f32
            })
            .collect();
        // A zero vector needs every component to cancel exactly; fall back to
        // the clean latent if that ever happens.
        l2_normalize(&v).unwrap_or_else(|_| base.clone())
    }

    fn pixel_seed(&self, img: &Image) -> u64 {
        let mut h = Sha256::new();
        h.update(self.cfg.seed.to_le_bytes());
        h.update(img.digest_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }

    /// Connected foreground regions (4-neighbourhood) in scan order.
    pub fn foreground_regions(&self, img: &Image) -> Vec<PixelRect> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let bg = BACKGROUND_RGB.map(f64::from);
        let fg: Vec<bool> = img
            .pixels()
            .chunks_exact(3)
            .map(|p| rgb_distance([p[0], p[1], p[2]].map(f64::from), bg) > FOREGROUND_DISTANCE)
            .collect();
        let mut seen = vec![false; w * h];
        let mut regions = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if !fg[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            let mut count = 0;
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                count += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                let mut visit = |j: usize| {
                    if fg[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            if count >= MIN_REGION_PIXELS {
                regions.push(PixelRect {
                    x0: x0 as u32,
                    y0: y0 as u32,
                    x1: x1 as u32 + 1,
                    y1: y1 as u32 + 1,
                });
            }
        }
        regions
    }

    /// Image-domain reference corpus: encodings of `n` renders with classes
    /// and instances drawn from `seed`.
    pub fn image_corpus(&self, n: usize, corpus_seed: u64) -> Result<EmbeddingBatch> {
        let mut rng = seed::rng(seed::mix(corpus_seed, &[0x1a6e]));
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let class = rng.random_range(0..self.cfg.num_classes);
            let instance: u64 = rng.random();
            rows.push(self.encode_image(&self.render(class, instance)?)?);
        }
        EmbeddingBatch::from_rows(self.cfg.dim, &rows)
    }

    /// Text-domain reference corpus: class latents with a small isotropic
    /// perturbation of per-component scale `sigma`.
    pub fn text_corpus(&self, n: usize, sigma: f64, corpus_seed: u64) -> Result<EmbeddingBatch> {
        let mut rng = seed::rng(seed::mix(corpus_seed, &[0x7e47]));
        let mut rows: Vec<Embedding> = Vec::with_capacity(n);
        for _ in 0..n {
            let class = rng.random_range(0..self.cfg.num_classes);
            let v: Vec<f32> = self.latents.classes[class]
                .as_slice()
                .iter()
                .map(|&x| {
                    let e: f64 = rng.sample(StandardNormal);
                    (f64::from(x) + sigma * e) as f32
                })
                .collect();
            rows.push(l2_normalize(&v)?.to_embedding());
        }
        EmbeddingBatch::from_rows(self.cfg.dim, &rows)
    }
}

impl Backend for MockWorld {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn encode_text(&self, text: &str) -> Result<UnitEmbedding> {
        if text == MAIN_OBJECT_PROMPT {
            return Ok(self.latents.saliency.clone());
        }
        let mut h = Sha256::new();
        h.update(self.cfg.seed.to_le_bytes());
        h.update(text.as_bytes());
        let d = h.finalize();
        let mut rng = seed::rng(u64::from_le_bytes(d[..8].try_into().unwrap()));
        Ok(to_unit(&gaussian_vector(&mut rng, self.cfg.dim)))
    }

    fn encode_image(&self, img: &Image) -> Result<UnitEmbedding> {
        let base = match self.match_class(img) {
            Some(c) => &self.latents.classes[c],
            None => &self.latents.background,
        };
        Ok(self.noisy(base, self.pixel_seed(img)))
    }

    fn detect(&self, img: &Image, prompts: &[UnitEmbedding]) -> Result<Vec<Detection>> {
        if prompts.is_empty() {
            return Err(Error::InvalidConfig("detector needs at least one prompt".into()));
        }
        for p in prompts {
            if p.dim() != self.cfg.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.cfg.dim,
                    found: p.dim(),
                });
            }
        }
        let regions = self.foreground_regions(img);
        let max_area = regions
            .iter()
            .map(|r| f64::from(r.width() * r.height()))
            .fold(0.0, f64::max);
        let mut out = Vec::with_capacity(regions.len() * prompts.len());
        for r in regions {
            let emb = self.encode_image(&img.crop(r)?)?;
            let bbox: BBox = r.to_bbox();
            let area = f64::from(r.width() * r.height());
            for (j, p) in prompts.iter().enumerate() {
                let score = if p.dot(&self.latents.saliency) > 1.0 - 1e-6 {
                    SALIENCY_SCORE * area / max_area
                } else {
                    (1.0 + emb.dot(p).clamp(-1.0, 1.0)) / 2.0
                };
                out.push(Detection::new(bbox, j, score.clamp(0.0, 1.0))?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{apply_augmentation, AugmentationKind};

    fn small_cfg() -> MockWorldConfig {
        MockWorldConfig {
            num_classes: 6,
            dim: 32,
            seed: 11,
            image_size: 48,
            ..MockWorldConfig::default()
        }
    }

    #[test]
    fn palette_has_capacity() {
        let p = palette();
        assert!(p.len() >= 32);
        let bg = BACKGROUND_RGB.map(f64::from);
        for c in &p {
            assert!(rgb_distance(c.map(f64::from), bg) >= MIN_PALETTE_GRAY_DISTANCE);
        }
    }

    #[test]
    fn latents_deterministic_and_orthonormal() {
        let cfg = MockWorldConfig {
            num_classes: 2,
            dim: 8,
            seed: 7,
            ..MockWorldConfig::default()
        };
        let a = mock_class_latents(&cfg).unwrap();
        assert_eq!(a, mock_class_latents(&cfg).unwrap());

        let world = MockWorld::new(MockWorldConfig::default()).unwrap();
        let l = world.class_latents();
        for i in 0..l.len() {
            assert!((l[i].dot(&l[i]) - 1.0).abs() < 1e-6);
            for j in 0..i {
                assert!(l[i].dot(&l[j]).abs() <= 1e-6);
            }
            assert!(l[i].dot(world.saliency_latent()).abs() <= 1e-6);
            assert!(l[i].dot(world.background_latent()).abs() <= 1e-6);
        }
    }

    #[test]
    fn too_many_classes() {
        let cfg = MockWorldConfig {
            num_classes: 9,
            dim: 4,
            ..MockWorldConfig::default()
        };
        assert!(matches!(
            mock_class_latents(&cfg),
            Err(Error::TooManyClasses { classes: 9, dim: 4 })
        ));
        assert!(matches!(MockWorld::new(cfg), Err(Error::TooManyClasses { .. })));
    }

    #[test]
    fn clean_render_is_exact() {
        let world = MockWorld::new(small_cfg()).unwrap();
        let img = world.render(3, 5).unwrap();
        let r = world.config().object_rect();
        // side = round(0.5 * 48) = 24, offset (48 - 24) / 2 = 12.
        assert_eq!(
            r,
            PixelRect {
                x0: 12,
                y0: 12,
                x1: 36,
                y1: 36
            }
        );
        for y in 0..48 {
            for x in 0..48 {
                let inside = (12..36).contains(&x) && (12..36).contains(&y);
                let want = if inside { world.class_color(3) } else { BACKGROUND_RGB };
                assert_eq!(img.get(x, y), want);
            }
        }
        assert_eq!(img, world.render(3, 5).unwrap());
        // Without noise the instance seed is irrelevant.
        assert_eq!(img, world.render(3, 6).unwrap());
    }

    #[test]
    fn noisy_render_is_deterministic_and_detectable() {
        let world = MockWorld::new(MockWorldConfig {
            noise_sigma: 0.3,
            ..small_cfg()
        })
        .unwrap();
        let a = world.render(2, 9).unwrap();
        assert_eq!(a, world.render(2, 9).unwrap());
        assert_ne!(a, world.render(2, 10).unwrap());
        assert_eq!(world.foreground_regions(&a), vec![world.config().object_rect()]);
        assert_eq!(world.match_class(&a), Some(2));
    }

    #[test]
    fn encode_clean_render_gives_latent() {
        let world = MockWorld::new(small_cfg()).unwrap();
        let e = world.encode_image(&world.render(3, 0).unwrap()).unwrap();
        assert_eq!(e, l2_normalize(world.class_latent(3).as_slice()).unwrap());

        let img = world.render(4, 0).unwrap();
        let flipped = apply_augmentation(&img, AugmentationKind::HFlip);
        assert_eq!(world.encode_image(&img).unwrap(), world.encode_image(&flipped).unwrap());

        let blank = Image::filled(48, 48, BACKGROUND_RGB).unwrap();
        let b = world.encode_image(&blank).unwrap();
        assert_eq!(b, l2_normalize(world.background_latent().as_slice()).unwrap());
    }

    #[test]
    fn encoded_renders_prefer_their_class() {
        let world = MockWorld::new(MockWorldConfig {
            noise_sigma: 0.02,
            num_classes: 19,
            dim: 512,
            ..MockWorldConfig::default()
        })
        .unwrap();
        for c in 0..19 {
            let e = world.encode_image(&world.render(c, 1).unwrap()).unwrap();
            let own = e.dot(world.class_latent(c));
            for other in (0..19).filter(|&o| o != c) {
                assert!(own >= e.dot(world.class_latent(other)));
            }
        }
    }

    #[test]
    fn augmentations_change_noise_but_not_class() {
        let world = MockWorld::new(MockWorldConfig {
            noise_sigma: 0.1,
            ..small_cfg()
        })
        .unwrap();
        let img = world.render(1, 3).unwrap();
        let a = world.encode_image(&img).unwrap();
        let b = world
            .encode_image(&apply_augmentation(&img, AugmentationKind::Rot90Cw))
            .unwrap();
        assert_ne!(a, b);
        assert_eq!(a, world.encode_image(&img).unwrap());
    }

    #[test]
    fn text_encoding() {
        let world = MockWorld::new(MockWorldConfig::default()).unwrap();
        assert_eq!(&world.encode_text("main object").unwrap(), world.saliency_latent());
        assert_eq!(world.encode_text("mug").unwrap(), world.encode_text("mug").unwrap());

        let mut rng = seed::rng(99);
        let strings: Vec<String> = (0..100)
            .map(|_| {
                let len = rng.random_range(1..12);
                (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
            })
            .collect();
        let embs: Vec<UnitEmbedding> = strings.iter().map(|s| world.encode_text(s).unwrap()).collect();
        for i in 0..embs.len() {
            for j in 0..i {
                if strings[i] != strings[j] {
                    assert!(embs[i].dot(&embs[j]) < 0.99);
                }
            }
        }
    }

    #[test]
    fn detect_behaviour() {
        let world = MockWorld::new(small_cfg()).unwrap();
        let blank = Image::filled(48, 48, BACKGROUND_RGB).unwrap();
        let p = vec![world.class_latent(0).clone()];
        assert!(world.detect(&blank, &p).unwrap().is_empty());
        assert!(world.detect(&blank, &[]).is_err());

        let img = world.render(2, 0).unwrap();
        let prompts = vec![world.class_latent(2).clone(), world.class_latent(5).clone()];
        let dets = world.detect(&img, &prompts).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].class_index, 0);
        assert!((dets[0].score - 1.0).abs() < 1e-6);
        assert!((dets[1].score - 0.5).abs() < 1e-6);

        let sal = world.encode_text(MAIN_OBJECT_PROMPT).unwrap();
        let dets = world.detect(&img, &[sal]).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].score, SALIENCY_SCORE);
        assert_eq!(dets[0].bbox, world.config().object_rect().to_bbox());
    }

    #[test]
    fn saliency_prefers_larger_region() {
        let world = MockWorld::new(small_cfg()).unwrap();
        let mut img = Image::filled(48, 48, BACKGROUND_RGB).unwrap();
        let small = PixelRect {
            x0: 2,
            y0: 2,
            x1: 10,
            y1: 10,
        };
        let large = PixelRect {
            x0: 20,
            y0: 20,
            x1: 44,
            y1: 40,
        };
        world.paint_object(&mut img, 1, 0, small).unwrap();
        world.paint_object(&mut img, 4, 0, large).unwrap();
        let sal = world.encode_text(MAIN_OBJECT_PROMPT).unwrap();
        let dets = world.detect(&img, &[sal]).unwrap();
        assert_eq!(dets.len(), 2);
        let best = crate::geometry::top1(&dets).unwrap();
        assert_eq!(best.bbox, large.to_bbox());
        assert_eq!(best.score, SALIENCY_SCORE);
        // 64 / 480 of the top score.
        let other = dets.iter().find(|d| d.bbox == small.to_bbox()).unwrap();
        assert!((other.score - SALIENCY_SCORE * 64.0 / 480.0).abs() < 1e-12);
    }

    #[test]
    fn aliased_colors_share_latent() {
        let world = MockWorld::new(MockWorldConfig {
            color_aliases: vec![(4, 1)],
            ..small_cfg()
        })
        .unwrap();
        assert_eq!(world.class_color(4), world.class_color(1));
        assert_eq!(world.match_class(&world.render(4, 0).unwrap()), Some(1));
    }

    #[test]
    fn config_validation() {
        let bad = |cfg: MockWorldConfig| MockWorld::new(cfg).is_err();
        assert!(bad(MockWorldConfig {
            num_classes: 1,
            ..small_cfg()
        }));
        assert!(bad(MockWorldConfig {
            num_classes: 60,
            dim: 512,
            ..small_cfg()
        }));
        assert!(bad(MockWorldConfig {
            noise_sigma: -1.0,
            ..small_cfg()
        }));
        assert!(bad(MockWorldConfig {
            object_fraction: 1.0,
            ..small_cfg()
        }));
        assert!(bad(MockWorldConfig {
            color_aliases: vec![(0, 99)],
            ..small_cfg()
        }));
        let parsed: MockWorldConfig = serde_json::from_str(r#"{"num_classes": 4}"#).unwrap();
        assert_eq!(parsed.dim, 512);
        assert!(serde_json::from_str::<MockWorldConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
