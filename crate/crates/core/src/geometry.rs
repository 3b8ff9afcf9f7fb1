//! Boxes, scored detections, ground truth, and the overlap primitives shared
//! by every stage.
//!
//! Coordinates are real-valued and half-open: a box covers
//! `[x1, x2) × [y1, y2)` and its area is `(x2 - x1) * (y2 - y1)` with no
//! `+1` pixel correction.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::DegenerateBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Shifts the box by `(dx, dy)`.
    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn is_inside(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.coords()
    }
}

/// A scored, classed box on one frame of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub video_id: String,
    pub frame: usize,
    pub class_id: usize,
    /// Unbounded; higher means more confident.
    pub score: f64,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub video_id: String,
    pub frame: usize,
    pub class_id: usize,
    /// Identity of the object across frames.
    pub instance_id: usize,
    pub bbox: BoundingBox,
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Clips a box to `[0, width] × [0, height]`.
pub fn clamp_box(b: &BoundingBox, width: f64, height: f64) -> Result<BoundingBox> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::InvalidArgument(format!("frame size must be positive, got {width}x{height}")));
    }
    BoundingBox::new(b.x1.clamp(0.0, width), b.y1.clamp(0.0, height), b.x2.clamp(0.0, width), b.y2.clamp(0.0, height))
}

/// Indices of `scores` sorted by descending score; equal scores keep input order.
pub(crate) fn order_by_score_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap_or(Ordering::Equal));
    order
}

/// Greedy non-maximum suppression over parallel box/score slices. Returns
/// the kept indices in descending score order.
pub fn nms_indices(boxes: &[BoundingBox], scores: &[f64], overlap_thresh: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&overlap_thresh) {
        return Err(Error::InvalidArgument(format!("nms overlap threshold {overlap_thresh} outside [0, 1]")));
    }
    if boxes.len() != scores.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} scores", boxes.len()),
            actual: format!("{} scores", scores.len()),
        });
    }
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for i in order_by_score_desc(scores) {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for (j, s) in suppressed.iter_mut().enumerate() {
            if !*s && j != i && iou(&boxes[i], &boxes[j]) >= overlap_thresh {
                *s = true;
            }
        }
        suppressed[i] = true;
    }
    Ok(keep)
}

/// Greedy NMS over detections of one frame and class.
pub fn nms(dets: &[Detection], overlap_thresh: f64) -> Result<Vec<Detection>> {
    if let Some(first) = dets.first() {
        if dets.iter().any(|d| d.frame != first.frame || d.class_id != first.class_id || d.video_id != first.video_id) {
            return Err(Error::InvalidArgument("nms input must share video, frame and class".into()));
        }
    }
    let boxes: Vec<_> = dets.iter().map(|d| d.bbox).collect();
    let scores: Vec<_> = dets.iter().map(|d| d.score).collect();
    Ok(nms_indices(&boxes, &scores, overlap_thresh)?.into_iter().map(|i| dets[i].clone()).collect())
}
