use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::DetectorOracle;
use crate::geometry::{iou, BoundingBox, Detection, GroundTruthObject};
use crate::seed::SeedKey;

/// `a * max_iou(box, frame_gt) + b + N(0, sigma)`; the max over an empty set is 0.
///
/// With `sigma = 0` no random number is drawn and the score is strictly
/// increasing in the overlap for `a > 0`.
pub fn synthetic_detector_score<R: Rng + ?Sized>(
    bbox: &BoundingBox,
    frame_gt: &[BoundingBox],
    a: f64,
    b: f64,
    sigma: f64,
    rng: &mut R,
) -> f64 {
    let overlap = frame_gt.iter().map(|g| iou(bbox, g)).fold(0.0, f64::max);
    let noise = if sigma > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        sigma * z
    } else {
        0.0
    };
    a * overlap + b + noise
}

type FrameKey = (String, usize, usize);

/// Scores boxes by their overlap with the ground truth of the queried class.
/// The noise for a box is keyed by (video, frame, class, box), so the same
/// query always returns the same score.
#[derive(Debug, Clone)]
pub struct SyntheticDetector {
    gt: HashMap<FrameKey, Vec<BoundingBox>>,
    a: f64,
    b: f64,
    sigma: f64,
    seed: u64,
}

impl SyntheticDetector {
    pub fn new(gts: &[GroundTruthObject], a: f64, b: f64, sigma: f64, seed: u64) -> Self {
        let mut gt: HashMap<FrameKey, Vec<BoundingBox>> = HashMap::new();
        for g in gts {
            gt.entry((g.video_id.clone(), g.frame, g.class_id)).or_default().push(g.bbox);
        }
        Self { gt, a, b, sigma, seed }
    }
}

impl DetectorOracle for SyntheticDetector {
    fn score_boxes(&self, video_id: &str, frame: usize, class_id: usize, boxes: &[BoundingBox]) -> Vec<f64> {
        let frame_gt = self.gt.get(&(video_id.to_string(), frame, class_id)).map_or(&[][..], Vec::as_slice);
        let key = SeedKey::new(self.seed).str("detector").str(video_id).u64(frame as u64).u64(class_id as u64);
        boxes
            .iter()
            .map(|bx| {
                let mut rng = key.bbox(bx).rng();
                synthetic_detector_score(bx, frame_gt, self.a, self.b, self.sigma, &mut rng)
            })
            .collect()
    }
}

/// Looks up scores in a stored detection set: an exact box match first, else
/// the stored detection with the highest IoU of at least 0.9, else `-inf`.
#[derive(Debug, Clone, Default)]
pub struct FileDetector {
    dets: HashMap<FrameKey, Vec<(BoundingBox, f64)>>,
}

impl FileDetector {
    pub const MATCH_IOU: f64 = 0.9;

    pub fn new(detections: &[Detection]) -> Self {
        let mut dets: HashMap<FrameKey, Vec<(BoundingBox, f64)>> = HashMap::new();
        for d in detections {
            dets.entry((d.video_id.clone(), d.frame, d.class_id)).or_default().push((d.bbox, d.score));
        }
        Self { dets }
    }

    fn lookup(stored: &[(BoundingBox, f64)], q: &BoundingBox) -> f64 {
        let exact = stored
            .iter()
            .filter(|(b, _)| b == q)
            .map(|(_, s)| *s)
            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
        if let Some(s) = exact {
            return s;
        }
        let mut best: Option<(f64, f64)> = None;
        for (b, s) in stored {
            let o = iou(b, q);
            if o >= Self::MATCH_IOU && best.is_none_or(|(bo, _)| o > bo) {
                best = Some((o, *s));
            }
        }
        best.map_or(f64::NEG_INFINITY, |(_, s)| s)
    }
}

impl DetectorOracle for FileDetector {
    fn score_boxes(&self, video_id: &str, frame: usize, class_id: usize, boxes: &[BoundingBox]) -> Vec<f64> {
        let stored = self.dets.get(&(video_id.to_string(), frame, class_id)).map_or(&[][..], Vec::as_slice);
        boxes.iter().map(|q| Self::lookup(stored, q)).collect()
    }
}
