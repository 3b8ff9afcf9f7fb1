mod common;

use common::*;
use tubelet_core::dataio::{Schema, VideoMeta};
use tubelet_core::oracles::{generate_world, DetectorOracle, Direction, SimConfig, TrackStep, TrackerOracle};
use tubelet_core::pipeline::{filter_and_score, propose_all};
use tubelet_core::proposal::{propose_tubelets, ProposalConfig, Tubelet};
use tubelet_core::{BoundingBox, Detection};

struct Setup {
    schema: Schema,
    detections: Vec<Detection>,
    tubelets: Vec<Tubelet>,
    cfg: SimConfig,
}

fn setup(seed: u64, pcfg: &ProposalConfig) -> Setup {
    let cfg = SimConfig { seed, videos: 4, ..Default::default() };
    let world = generate_world(&cfg).unwrap();
    let schema = world.schema().unwrap();
    let detector = cfg.detector(&world.ground_truth);
    let tracker = cfg.tracker(&world.ground_truth);
    let (_, detections) = filter_and_score(&schema, &world.proposals, &detector, -1.1);
    let tubelets = propose_all(&schema, &detections, &tracker, &detector, pcfg).unwrap();
    Setup { schema, detections, tubelets, cfg }
}

#[test]
fn default_invariants_on_synthetic_worlds() {
    let pcfg = ProposalConfig::default();
    for seed in 0..3 {
        let s = setup(seed, &pcfg);
        assert!(!s.tubelets.is_empty());
        for v in s.schema.videos() {
            for c in 0..s.schema.num_classes() {
                let mine: Vec<_> = s.tubelets.iter().filter(|t| t.video_id == v.video_id && t.class_id == c).collect();
                assert!(mine.len() <= 20);
                for (j, t) in mine.iter().enumerate() {
                    t.validate().unwrap();
                    let anchor = t.anchor_box().unwrap();
                    assert!(anchor.det_score >= 0.0);
                    for earlier in &mine[..j] {
                        if let Some(b) = earlier.box_on(t.anchor_frame) {
                            assert!(naive_iou(&b.bbox, &anchor.bbox) < 0.3);
                        }
                    }
                    for b in t.boxes.iter().filter(|b| b.frame != t.anchor_frame) {
                        assert!(b.track_score >= 0.1);
                    }
                }
                // anchors come out in non-increasing score order
                let scores: Vec<_> = mine.iter().map(|t| t.anchor_box().unwrap().det_score).collect();
                assert!(scores.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }
}

/// `(frame, box, score)` of one reference tubelet box.
type TrackedBox = (usize, BoundingBox, f64);

/// Straight transcription of the iterative procedure, recomputing the
/// suppression test against every earlier tubelet each time a detection is
/// considered.
fn reference_proposals(
    video: &VideoMeta,
    class_id: usize,
    dets: &[Detection],
    tracker: &dyn TrackerOracle,
    detector: &dyn DetectorOracle,
    cfg: &ProposalConfig,
) -> Vec<(usize, Vec<TrackedBox>)> {
    let mut used = vec![false; dets.len()];
    let mut out: Vec<(usize, Vec<TrackedBox>)> = Vec::new();
    while out.len() < cfg.max_anchors_per_class {
        let mut pick: Option<usize> = None;
        for i in 0..dets.len() {
            if used[i] || dets[i].score < cfg.anchor_min_score {
                continue;
            }
            let suppressed = out.iter().any(|(_, boxes)| {
                boxes.iter().any(|(f, b, _)| *f == dets[i].frame && naive_iou(b, &dets[i].bbox) >= cfg.suppression_iou)
            });
            if suppressed {
                used[i] = true;
                continue;
            }
            if pick.is_none_or(|p| dets[i].score > dets[p].score) {
                pick = Some(i);
            }
        }
        let Some(a) = pick else { break };
        used[a] = true;
        let anchor = &dets[a];
        let mut boxes = vec![(anchor.frame, anchor.bbox, anchor.score)];
        for dir in [Direction::Backward, Direction::Forward] {
            for step in tracker.track(video, class_id, anchor, dir) {
                if step.confidence < cfg.early_stop_conf {
                    break;
                }
                let s = detector.score_boxes(&video.video_id, step.frame, class_id, &[step.bbox])[0];
                boxes.push((step.frame, step.bbox, s));
            }
        }
        boxes.sort_by_key(|b| b.0);
        out.push((anchor.frame, boxes));
    }
    out
}

#[test]
fn matches_reference_resimulation() {
    for pcfg in [
        ProposalConfig::default(),
        ProposalConfig { early_stop_conf: 0.6, suppression_iou: 0.5, max_anchors_per_class: 3, ..Default::default() },
    ] {
        let s = setup(11, &pcfg);
        let world = generate_world(&s.cfg).unwrap();
        let detector = s.cfg.detector(&world.ground_truth);
        let tracker = s.cfg.tracker(&world.ground_truth);
        for v in s.schema.videos() {
            for c in 0..s.schema.num_classes() {
                let dets: Vec<_> =
                    s.detections.iter().filter(|d| d.video_id == v.video_id && d.class_id == c).cloned().collect();
                let want = reference_proposals(v, c, &dets, &tracker, &detector, &pcfg);
                let got: Vec<_> = s.tubelets.iter().filter(|t| t.video_id == v.video_id && t.class_id == c).collect();
                assert_eq!(got.len(), want.len());
                for (t, (anchor_frame, boxes)) in got.iter().zip(&want) {
                    assert_eq!(t.anchor_frame, *anchor_frame);
                    let flat: Vec<_> = t.boxes.iter().map(|b| (b.frame, b.bbox, b.det_score)).collect();
                    assert_eq!(&flat, boxes);
                }
            }
        }
    }
}

/// Returns the anchor box on every frame with confidence 1.
struct Static;

impl TrackerOracle for Static {
    fn track(&self, video: &VideoMeta, _: usize, anchor: &Detection, dir: Direction) -> Vec<TrackStep> {
        (1..)
            .map_while(|k| dir.offset(anchor.frame, k, video.frame_count))
            .map(|frame| TrackStep { frame, bbox: anchor.bbox, confidence: 1.0 })
            .collect()
    }
}

struct Zero;

impl DetectorOracle for Zero {
    fn score_boxes(&self, _: &str, _: usize, _: usize, boxes: &[BoundingBox]) -> Vec<f64> {
        vec![0.0; boxes.len()]
    }
}

#[test]
fn overlapping_detections_on_a_static_object_give_one_tubelet() {
    let v = VideoMeta { video_id: "v".into(), frame_count: 8, width: 100.0, height: 100.0 };
    let a = bb(10.0, 10.0, 50.0, 50.0);
    let b = bb(12.0, 10.0, 52.0, 50.0);
    assert!(naive_iou(&a, &b) >= 0.8);
    let dets = [det("v", 2, 0, 0.9, a), det("v", 5, 0, 0.8, b)];
    let t = propose_tubelets(&v, 0, &dets, &Static, &Zero, &ProposalConfig::default()).unwrap();
    assert_eq!(t.len(), 1);
    assert_eq!(t[0].len(), 8);
    assert_eq!(t[0].anchor_frame, 2);
}

#[test]
fn anchor_cap_and_min_score() {
    let v = VideoMeta { video_id: "v".into(), frame_count: 3, width: 1000.0, height: 100.0 };
    // 30 disjoint detections on one frame
    let dets: Vec<_> = (0..30)
        .map(|i| det("v", 1, 0, i as f64 / 10.0 - 0.5, bb(30.0 * i as f64, 0.0, 30.0 * i as f64 + 20.0, 20.0)))
        .collect();
    let cfg = ProposalConfig::default();
    let t = propose_tubelets(&v, 0, &dets, &Static, &Zero, &cfg).unwrap();
    assert_eq!(t.len(), 20);
    let cfg = ProposalConfig { anchor_min_score: 2.0, ..cfg };
    let t = propose_tubelets(&v, 0, &dets, &Static, &Zero, &cfg).unwrap();
    assert_eq!(t.len(), 5);
}
