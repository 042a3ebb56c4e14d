//! RGB images and the lossless orientation augmentations applied to crops.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{ImageDims, PixelRect};

/// 8-bit RGB image, row-major, interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        ImageDims::new(width, height)?;
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::format(format!(
                "pixel buffer has {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        Self::new(width, height, rgb.repeat(n))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> ImageDims {
        ImageDims {
            width: self.width,
            height: self.height,
        }
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, r: PixelRect) -> Result<Image> {
        if r.x1 > self.width || r.y1 > self.height || r.x0 >= r.x1 || r.y0 >= r.y1 {
            return Err(Error::EmptyCrop);
        }
        let mut pixels = Vec::with_capacity(r.width() as usize * r.height() as usize * 3);
        for y in r.y0..r.y1 {
            let start = self.offset(r.x0, y);
            pixels.extend_from_slice(&self.pixels[start..start + r.width() as usize * 3]);
        }
        Image::new(r.width(), r.height(), pixels)
    }

    /// Hex SHA-256 over the dimensions and pixel bytes.
    pub fn digest(&self) -> String {
        hex::encode(self.digest_bytes())
    }

    pub(crate) fn digest_bytes(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update(&self.pixels);
        h.finalize().into()
    }

    /// Decodes any PNG or JPEG file into RGB.
    pub fn open(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::ImageDecode {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
        let rgb = decoded.to_rgb8();
        let (w, h) = rgb.dimensions();
        Image::new(w, h, rgb.into_raw())
    }

    /// Writes the image atomically; the format follows the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let decode_err = |e: image::ImageError| Error::ImageDecode {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let format = image::ImageFormat::from_path(path).map_err(decode_err)?;
        let buf = image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("pixel buffer matches dimensions");
        let mut bytes = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut bytes, format).map_err(decode_err)?;
        crate::fsutil::write_atomic(path, bytes.get_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    Identity,
    Rot90Cw,
    Rot90Ccw,
    HFlip,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 4] = [
        AugmentationKind::Identity,
        AugmentationKind::Rot90Cw,
        AugmentationKind::Rot90Ccw,
        AugmentationKind::HFlip,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AugmentationKind::Identity => "identity",
            AugmentationKind::Rot90Cw => "rot90_cw",
            AugmentationKind::Rot90Ccw => "rot90_ccw",
            AugmentationKind::HFlip => "h_flip",
        }
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::format(format!("unknown augmentation `{s}`")))
    }
}

/// The augmentation list used at enrollment; the original is always first.
pub fn default_augmentation_set() -> Vec<AugmentationKind> {
    AugmentationKind::ALL.to_vec()
}

pub fn augmentation_set(enabled: bool) -> Vec<AugmentationKind> {
    if enabled {
        default_augmentation_set()
    } else {
        vec![AugmentationKind::Identity]
    }
}

/// Exact pixel permutation; rotations swap width and height.
pub fn apply_augmentation(img: &Image, kind: AugmentationKind) -> Image {
    let (w, h) = (img.width, img.height);
    // Maps an output coordinate to its source coordinate.
    type Source = Box<dyn Fn(u32, u32) -> (u32, u32)>;
    let (out_w, out_h, src): (u32, u32, Source) = match kind {
        AugmentationKind::Identity => return img.clone(),
        AugmentationKind::HFlip => (w, h, Box::new(move |x, y| (w - 1 - x, y))),
        AugmentationKind::Rot90Cw => (h, w, Box::new(move |x, y| (y, h - 1 - x))),
        AugmentationKind::Rot90Ccw => (h, w, Box::new(move |x, y| (w - 1 - y, x))),
    };
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = src(x, y);
            let o = img.offset(sx, sy);
            pixels.extend_from_slice(&img.pixels[o..o + 3]);
        }
    }
    Image {
        width: out_w,
        height: out_h,
        pixels,
    }
}
