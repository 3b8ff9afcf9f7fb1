//! Tubelet proposal: iterative anchor selection, bidirectional tracking with
//! early stop, and track-detection suppression.

use serde::{Deserialize, Serialize};

use crate::dataio::VideoMeta;
use crate::error::{Error, Result};
use crate::geometry::{iou, order_by_score_desc, BoundingBox, Detection};
use crate::oracles::{DetectorOracle, Direction, TrackerOracle};

#[derive(Debug, Clone, PartialEq)]
pub struct TubeletBox {
    pub frame: usize,
    pub bbox: BoundingBox,
    pub det_score: f64,
    pub track_score: f64,
    pub anchor_offset_norm: f64,
    pub tcn_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tubelet {
    pub video_id: String,
    pub class_id: usize,
    pub anchor_frame: usize,
    /// Contiguous, strictly increasing frames.
    pub boxes: Vec<TubeletBox>,
}

impl Tubelet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn start_frame(&self) -> usize {
        self.boxes.first().map_or(self.anchor_frame, |b| b.frame)
    }

    pub fn end_frame(&self) -> usize {
        self.boxes.last().map_or(self.anchor_frame, |b| b.frame)
    }

    pub fn box_on(&self, frame: usize) -> Option<&TubeletBox> {
        let start = self.start_frame();
        frame.checked_sub(start).and_then(|i| self.boxes.get(i))
    }

    pub fn anchor_box(&self) -> Option<&TubeletBox> {
        self.box_on(self.anchor_frame)
    }

    /// Checks the structural invariants: non-empty, contiguous frames and
    /// an anchor inside the span.
    pub fn validate(&self) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::InvalidArgument("empty tubelet".into()));
        }
        let start = self.start_frame();
        for (i, b) in self.boxes.iter().enumerate() {
            if b.frame != start + i {
                return Err(Error::InvalidArgument(format!("tubelet frames not contiguous at index {i}")));
            }
        }
        if self.anchor_frame < start || self.anchor_frame > self.end_frame() {
            return Err(Error::InvalidArgument(format!(
                "anchor frame {} outside [{}, {}]",
                self.anchor_frame,
                start,
                self.end_frame()
            )));
        }
        Ok(())
    }

    pub fn det_scores(&self) -> Vec<f64> {
        self.boxes.iter().map(|b| b.det_score).collect()
    }

    pub fn tcn_scores(&self) -> Option<Vec<f64>> {
        self.boxes.iter().map(|b| b.tcn_score).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    pub early_stop_conf: f64,
    pub anchor_min_score: f64,
    pub suppression_iou: f64,
    pub max_anchors_per_class: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self { early_stop_conf: 0.1, anchor_min_score: 0.0, suppression_iou: 0.3, max_anchors_per_class: 20 }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.early_stop_conf) {
            return Err(Error::Config(format!("early_stop_conf {} outside [0, 1]", self.early_stop_conf)));
        }
        if !(0.0..=1.0).contains(&self.suppression_iou) {
            return Err(Error::Config(format!("suppression_iou {} outside [0, 1]", self.suppression_iou)));
        }
        if self.anchor_min_score.is_nan() {
            return Err(Error::Config("anchor_min_score is NaN".into()));
        }
        if self.max_anchors_per_class == 0 {
            return Err(Error::Config("max_anchors_per_class must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fills `anchor_offset_norm` with `|frame - anchor_frame| / len`.
pub fn anchor_offsets(tubelet: &mut Tubelet) {
    let len = tubelet.boxes.len().max(1) as f64;
    let anchor = tubelet.anchor_frame;
    for b in &mut tubelet.boxes {
        b.anchor_offset_norm = b.frame.abs_diff(anchor) as f64 / len;
    }
}

/// Tracked steps up to (excluding) the first one below the early-stop
/// confidence.
fn truncate_track(
    steps: Vec<crate::oracles::TrackStep>,
    anchor_frame: usize,
    direction: Direction,
    video: &VideoMeta,
    early_stop_conf: f64,
) -> Vec<crate::oracles::TrackStep> {
    let mut kept = Vec::with_capacity(steps.len());
    for (k, step) in steps.into_iter().enumerate() {
        // A step off the expected frame is treated as a tracking failure.
        let expected = direction.offset(anchor_frame, k + 1, video.frame_count);
        if Some(step.frame) != expected || step.confidence.is_nan() || step.confidence < early_stop_conf {
            break;
        }
        kept.push(step);
    }
    kept
}

/// Builds the tubelet proposals of one class in one video.
///
/// Repeatedly takes the highest-scoring remaining detection (score at least
/// `anchor_min_score`) as anchor, tracks it both ways, cuts each direction at
/// the first step whose confidence is below `early_stop_conf`, and removes
/// every remaining detection overlapping a box of the new tubelet on its own
/// frame by at least `suppression_iou`. Tracked boxes are scored with
/// `detector`; the anchor keeps its detection score and a track score of 1.
/// Output is ordered by anchor score, highest first.
pub fn propose_tubelets(
    video: &VideoMeta,
    class_id: usize,
    detections: &[Detection],
    tracker: &dyn TrackerOracle,
    detector: &dyn DetectorOracle,
    cfg: &ProposalConfig,
) -> Result<Vec<Tubelet>> {
    cfg.validate()?;
    if let Some(d) = detections.iter().find(|d| d.class_id != class_id || d.video_id != video.video_id) {
        return Err(Error::InvalidArgument(format!(
            "detection of video {} class {} passed to proposal for video {} class {}",
            d.video_id, d.class_id, video.video_id, class_id
        )));
    }

    let scores: Vec<f64> = detections.iter().map(|d| d.score).collect();
    // Descending score, stable on input order: the pool is consumed front to back.
    let mut pool: Vec<usize> =
        order_by_score_desc(&scores).into_iter().filter(|&i| detections[i].score >= cfg.anchor_min_score).collect();

    let mut tubelets: Vec<Tubelet> = Vec::new();
    while tubelets.len() < cfg.max_anchors_per_class {
        let Some((&anchor_idx, rest)) = pool.split_first() else {
            break;
        };
        let anchor = &detections[anchor_idx];
        pool = rest.to_vec();

        let tubelet = track_anchor(video, class_id, anchor, tracker, detector, cfg);
        pool.retain(|&i| {
            let d = &detections[i];
            tubelet.box_on(d.frame).is_none_or(|b| iou(&d.bbox, &b.bbox) < cfg.suppression_iou)
        });
        tubelets.push(tubelet);
    }
    Ok(tubelets)
}

fn track_anchor(
    video: &VideoMeta,
    class_id: usize,
    anchor: &Detection,
    tracker: &dyn TrackerOracle,
    detector: &dyn DetectorOracle,
    cfg: &ProposalConfig,
) -> Tubelet {
    let backward = truncate_track(
        tracker.track(video, class_id, anchor, Direction::Backward),
        anchor.frame,
        Direction::Backward,
        video,
        cfg.early_stop_conf,
    );
    let forward = truncate_track(
        tracker.track(video, class_id, anchor, Direction::Forward),
        anchor.frame,
        Direction::Forward,
        video,
        cfg.early_stop_conf,
    );

    let mut boxes = Vec::with_capacity(backward.len() + 1 + forward.len());
    for step in backward.iter().rev() {
        boxes.push(tracked_box(video, class_id, step, detector));
    }
    boxes.push(TubeletBox {
        frame: anchor.frame,
        bbox: anchor.bbox,
        det_score: anchor.score,
        track_score: 1.0,
        anchor_offset_norm: 0.0,
        tcn_score: None,
    });
    for step in &forward {
        boxes.push(tracked_box(video, class_id, step, detector));
    }

    let mut tubelet = Tubelet { video_id: video.video_id.clone(), class_id, anchor_frame: anchor.frame, boxes };
    anchor_offsets(&mut tubelet);
    tubelet
}

fn tracked_box(
    video: &VideoMeta,
    class_id: usize,
    step: &crate::oracles::TrackStep,
    detector: &dyn DetectorOracle,
) -> TubeletBox {
    let det_score = detector.score_boxes(&video.video_id, step.frame, class_id, &[step.bbox])[0];
    TubeletBox {
        frame: step.frame,
        bbox: step.bbox,
        det_score,
        track_score: step.confidence.clamp(0.0, 1.0),
        anchor_offset_norm: 0.0,
        tcn_score: None,
    }
}
