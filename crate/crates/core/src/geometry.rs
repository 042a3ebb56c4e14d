//! Box arithmetic: IoU, greedy NMS and margin crops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let finite = [x0, y0, x1, y1].iter().all(|v| v.is_finite());
        if !finite || x0 >= x1 || y0 >= y1 {
            return Err(Error::format(format!("invalid box ({x0}, {y0}, {x1}, {y1})")));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn y0(&self) -> f64 {
        self.y0
    }
    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    /// Integer pixel rectangle covering this box (floor for mins, ceil for
    /// maxes), clamped to the image.
    pub fn to_pixel_rect(&self, dims: ImageDims) -> Result<PixelRect> {
        let clamp = |v: f64, hi: u32| v.clamp(0.0, f64::from(hi)) as u32;
        let x0 = clamp(self.x0.floor(), dims.width);
        let y0 = clamp(self.y0.floor(), dims.height);
        let x1 = clamp(self.x1.ceil(), dims.width);
        let y1 = clamp(self.y1.ceil(), dims.height);
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::EmptyCrop);
        }
        Ok(PixelRect { x0, y0, x1, y1 })
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(a: [f64; 4]) -> Result<Self> {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Half-open integer rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn to_bbox(&self) -> BBox {
        BBox {
            x0: f64::from(self.x0),
            y0: f64::from(self.y0),
            x1: f64::from(self.x1),
            y1: f64::from(self.y1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::format(format!("invalid image size {width}x{height}")));
        }
        Ok(Self { width, height })
    }
}

/// A scored box; `class_index` refers to the position of the prompt that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct Detection {
    pub bbox: BBox,
    pub class_index: usize,
    pub score: f64,
}

#[derive(Deserialize)]
struct RawDetection {
    bbox: BBox,
    class_index: usize,
    score: f64,
}

impl TryFrom<RawDetection> for Detection {
    type Error = Error;

    fn try_from(r: RawDetection) -> Result<Self> {
        Detection::new(r.bbox, r.class_index, r.score)
    }
}

impl Detection {
    pub fn new(bbox: BBox, class_index: usize, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::format(format!("detection score {score} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            class_index,
            score,
        })
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

/// Input indices ordered by descending score, ties by lower index.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score));
    order
}

fn greedy_suppress(dets: &[Detection], iou_threshold: f64, per_class: bool) -> Vec<Detection> {
    let order = score_order(dets);
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[pos] {
            continue;
        }
        keep.push(dets[i]);
        for (later, &j) in order.iter().enumerate().skip(pos + 1) {
            if suppressed[later] || (per_class && dets[i].class_index != dets[j].class_index) {
                continue;
            }
            if iou(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[later] = true;
            }
        }
    }
    keep
}

/// Greedy class-agnostic non-maximum suppression.
///
/// Repeatedly keeps the best remaining detection and drops every remaining
/// one whose IoU with it exceeds `iou_threshold`. Output is sorted by
/// descending score, ties by input position.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    greedy_suppress(dets, iou_threshold, false)
}

/// Same greedy rule, but a detection only suppresses others of its class.
pub fn nms_per_class(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    greedy_suppress(dets, iou_threshold, true)
}

/// Highest-score detection, ties by lower index.
pub fn top1(dets: &[Detection]) -> Result<Detection> {
    score_order(dets).first().map(|&i| dets[i]).ok_or(Error::NoDetection)
}

/// Grows `b` by `margin` pixels on each side and clamps it to the image.
pub fn crop_with_margin(b: &BBox, margin: f64, dims: ImageDims) -> Result<BBox> {
    if !(margin >= 0.0) || !margin.is_finite() {
        return Err(Error::InvalidConfig(format!("invalid margin {margin}")));
    }
    let (w, h) = (f64::from(dims.width), f64::from(dims.height));
    let x0 = (b.x0 - margin).clamp(0.0, w);
    let y0 = (b.y0 - margin).clamp(0.0, h);
    let x1 = (b.x1 + margin).clamp(0.0, w);
    let y1 = (b.y1 + margin).clamp(0.0, h);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::EmptyCrop);
    }
    Ok(BBox { x0, y0, x1, y1 })
}
