use std::collections::HashMap;

use super::{Direction, TrackStep, TrackerOracle};
use crate::dataio::{Proposal, VideoMeta};
use crate::geometry::{clamp_box, iou, BoundingBox, Detection, GroundTruthObject};
use crate::seed::SeedKey;

/// Links the previous box to the best-overlapping proposal on each next
/// frame. Confidence is that overlap. When no proposal overlaps the previous
/// box the track is lost: the last box is carried with confidence 0 until the
/// video boundary.
#[derive(Debug, Clone, Default)]
pub struct IouChainTracker {
    proposals: HashMap<(String, usize), Vec<BoundingBox>>,
}

impl IouChainTracker {
    pub fn new(proposals: &[Proposal]) -> Self {
        let mut map: HashMap<(String, usize), Vec<BoundingBox>> = HashMap::new();
        for p in proposals {
            map.entry((p.video_id.clone(), p.frame)).or_default().push(p.bbox);
        }
        Self { proposals: map }
    }

    /// Index and overlap of the candidate best matching `prev`; ties go to
    /// the lower index.
    pub fn best_candidate(candidates: &[BoundingBox], prev: &BoundingBox) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in candidates.iter().enumerate() {
            let o = iou(c, prev);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((i, o));
            }
        }
        best
    }
}

impl TrackerOracle for IouChainTracker {
    fn track(&self, video: &VideoMeta, _class_id: usize, anchor: &Detection, direction: Direction) -> Vec<TrackStep> {
        let mut prev = anchor.bbox;
        let mut lost = false;
        let mut out = Vec::new();
        for frame in (1..).map_while(|k| direction.offset(anchor.frame, k, video.frame_count)) {
            let mut confidence = 0.0;
            if !lost {
                let candidates = self.proposals.get(&(video.video_id.clone(), frame)).map_or(&[][..], Vec::as_slice);
                match Self::best_candidate(candidates, &prev) {
                    Some((i, o)) if o > 0.0 => {
                        prev = candidates[i];
                        confidence = o;
                    }
                    _ => lost = true,
                }
            }
            out.push(TrackStep { frame, bbox: prev, confidence });
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Trajectory {
    start: usize,
    boxes: Vec<BoundingBox>,
}

impl Trajectory {
    fn at(&self, frame: usize) -> Option<&BoundingBox> {
        frame.checked_sub(self.start).and_then(|i| self.boxes.get(i))
    }
}

/// Simulated tracker that follows the true trajectory of the instance
/// nearest the anchor, displaced by a drift of `drift` pixels per frame in a
/// seeded direction. Confidence falls linearly, `1 - conf_decay * k` at `k`
/// frames from the anchor, and is 0 once the instance leaves the video or
/// the drifted box leaves the frame.
#[derive(Debug, Clone)]
pub struct GtFollowTracker {
    by_video: HashMap<String, Vec<Trajectory>>,
    drift: f64,
    conf_decay: f64,
    seed: u64,
}

impl GtFollowTracker {
    pub fn new(gts: &[GroundTruthObject], drift: f64, conf_decay: f64, seed: u64) -> Self {
        let mut by_video: HashMap<String, Vec<Trajectory>> = HashMap::new();
        for ((video, _), traj) in crate::dataio::trajectories(gts) {
            let start = traj[0].frame;
            // a gap splits the instance; keep the first contiguous run
            let boxes =
                traj.iter().enumerate().take_while(|(i, g)| g.frame == start + i).map(|(_, g)| g.bbox).collect();
            by_video.entry(video).or_default().push(Trajectory { start, boxes });
        }
        Self { by_video, drift, conf_decay, seed }
    }

    /// Instance best matching the anchor: highest IoU, else nearest center.
    fn nearest<'a>(&'a self, video: &str, anchor: &Detection) -> Option<&'a Trajectory> {
        let (ax, ay) = anchor.bbox.center();
        let mut best: Option<(&Trajectory, f64, f64)> = None;
        for t in self.by_video.get(video).into_iter().flatten() {
            let Some(b) = t.at(anchor.frame) else { continue };
            let o = iou(b, &anchor.bbox);
            let (cx, cy) = b.center();
            let dist = (cx - ax).hypot(cy - ay);
            let better = match best {
                None => true,
                Some((_, bo, bd)) => o > bo || (o == bo && dist < bd),
            };
            if better {
                best = Some((t, o, dist));
            }
        }
        best.map(|(t, _, _)| t)
    }
}

impl TrackerOracle for GtFollowTracker {
    fn track(&self, video: &VideoMeta, class_id: usize, anchor: &Detection, direction: Direction) -> Vec<TrackStep> {
        let Some(traj) = self.nearest(&video.video_id, anchor) else {
            return Vec::new();
        };
        let angle = {
            use rand::Rng;
            let mut rng = SeedKey::new(self.seed)
                .str("drift")
                .str(&video.video_id)
                .u64(class_id as u64)
                .u64(anchor.frame as u64)
                .bbox(&anchor.bbox)
                .u64(direction as u64)
                .rng();
            rng.random_range(0.0..std::f64::consts::TAU)
        };
        let (dx, dy) = (self.drift * angle.cos(), self.drift * angle.sin());

        let mut prev = anchor.bbox;
        let mut lost = false;
        let mut out = Vec::new();
        for (k, frame) in (1..).map_while(|k| direction.offset(anchor.frame, k, video.frame_count).map(|f| (k, f))) {
            if !lost {
                let drifted = traj.at(frame).and_then(|b| {
                    let off = k as f64;
                    b.translate(dx * off, dy * off).and_then(|b| clamp_box(&b, video.width, video.height)).ok()
                });
                match drifted {
                    Some(b) => prev = b,
                    None => lost = true,
                }
            }
            let confidence = if lost { 0.0 } else { (1.0 - self.conf_decay * k as f64).clamp(0.0, 1.0) };
            out.push(TrackStep { frame, bbox: prev, confidence });
        }
        out
    }
}
