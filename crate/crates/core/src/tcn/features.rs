//! Fixed-length feature windows over a tubelet: raw detection score,
//! tracking score and normalized anchor offset per frame.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::{iou, GroundTruthObject};
use crate::proposal::Tubelet;

pub const NUM_FEATURES: usize = 3;

/// Stand-in for a missing (non-finite) detection score.
pub const DET_SCORE_FLOOR: f64 = -10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    /// Offset of the window's first position within the tubelet.
    pub start: usize,
    /// `3 × window`: det score, track score, anchor offset.
    pub data: Array2<f64>,
    /// False on positions padded past the tubelet's end.
    pub mask: Vec<bool>,
}

impl FeatureWindow {
    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Window start offsets for a tubelet of `len` frames: every `stride`
/// frames, with the last window right-aligned to the tubelet end. Tubelets
/// no longer than `window` get a single window at 0.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if len <= window {
        return vec![0];
    }
    let last = len - window;
    let mut starts: Vec<usize> = (0..last).step_by(stride.max(1)).collect();
    starts.push(last);
    starts
}

/// Splits a tubelet into feature windows. Short windows are padded by
/// repeating the last frame's features, with the padding masked out.
pub fn build_features(tubelet: &Tubelet, window: usize, stride: usize) -> Result<Vec<FeatureWindow>> {
    if tubelet.boxes.is_empty() {
        return Err(Error::InvalidArgument("cannot build features for an empty tubelet".into()));
    }
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window and stride must be positive".into()));
    }
    let len = tubelet.boxes.len();
    let frame_features = |i: usize| {
        let b = &tubelet.boxes[i];
        let det = if b.det_score.is_finite() { b.det_score } else { DET_SCORE_FLOOR };
        [det, b.track_score, b.anchor_offset_norm]
    };
    Ok(window_starts(len, window, stride)
        .into_iter()
        .map(|start| {
            let mut data = Array2::zeros((NUM_FEATURES, window));
            let mut mask = vec![false; window];
            for (pos, m) in mask.iter_mut().enumerate() {
                let i = start + pos;
                *m = i < len;
                let f = frame_features(i.min(len - 1));
                for (c, v) in f.into_iter().enumerate() {
                    data[[c, pos]] = v;
                }
            }
            FeatureWindow { start, data, mask }
        })
        .collect())
}

/// Per-frame labels: 1 when the box overlaps some ground truth of the
/// tubelet's class on that frame by more than `iou_thresh`.
pub fn make_labels(tubelet: &Tubelet, gts: &[GroundTruthObject], iou_thresh: f64) -> Vec<u8> {
    tubelet
        .boxes
        .iter()
        .map(|b| {
            let best = gts
                .iter()
                .filter(|g| g.video_id == tubelet.video_id && g.class_id == tubelet.class_id && g.frame == b.frame)
                .map(|g| iou(&g.bbox, &b.bbox))
                .fold(0.0, f64::max);
            u8::from(best > iou_thresh)
        })
        .collect()
}

/// Labels of one window; padded positions get 0 and are masked anyway.
pub fn window_labels(labels: &[u8], w: &FeatureWindow) -> Vec<u8> {
    (0..w.mask.len()).map(|pos| if w.mask[pos] { labels[w.start + pos] } else { 0 }).collect()
}
