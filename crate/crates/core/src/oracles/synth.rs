//! Seeded synthetic videos: objects with linear motion and size drift,
//! jittered object proposals plus background clutter, and the parameters of
//! the simulated detector and tracker.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GtFollowTracker, SyntheticDetector};
use crate::dataio::{self, DatasetManifest, Proposal, Schema, VideoMeta};
use crate::error::{Error, Result};
use crate::geometry::{clamp_box, BoundingBox, GroundTruthObject};
use crate::seed::SeedKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub videos: usize,
    pub frames: usize,
    pub classes: usize,
    pub instances_per_video: usize,
    /// Detector noise standard deviation.
    pub sigma_det: f64,
    /// Detector slope on overlap.
    pub a: f64,
    /// Detector offset.
    pub b: f64,
    pub proposals_per_frame: usize,
    /// Corner jitter of object proposals, as a fraction of box size.
    pub jitter: f64,
    /// Tracker drift in pixels per frame.
    pub drift: f64,
    /// Tracker confidence lost per frame.
    pub conf_decay: f64,
    pub width: f64,
    pub height: f64,
    /// Maximum object speed in pixels per frame.
    pub max_speed: f64,
    /// Maximum relative size change over an object's lifetime.
    pub size_drift: f64,
    /// Minimum fraction of the video an object is visible in.
    pub min_span: f64,
    /// Jittered proposals generated around each visible object.
    pub object_proposals: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            videos: 12,
            frames: 60,
            classes: 3,
            instances_per_video: 3,
            sigma_det: 0.2,
            a: 3.0,
            b: -2.2,
            proposals_per_frame: 40,
            jitter: 0.05,
            drift: 1.5,
            conf_decay: 0.01,
            width: 320.0,
            height: 240.0,
            max_speed: 1.5,
            size_drift: 0.2,
            min_span: 0.6,
            object_proposals: 8,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.videos == 0 || self.frames == 0 {
            return err("simulation needs at least one video and one frame");
        }
        if self.instances_per_video == 0 {
            return err("simulation needs at least one instance per video");
        }
        if self.classes == 0 {
            return err("simulation needs at least one class");
        }
        if self.a.is_nan() || self.a <= 0.0 || !self.b.is_finite() || self.sigma_det.is_nan() || self.sigma_det < 0.0 {
            return err("detector needs a > 0, finite b and sigma_det >= 0");
        }
        if !(self.width >= 16.0 && self.height >= 16.0) {
            return err("frame must be at least 16x16");
        }
        if !(self.jitter >= 0.0 && self.drift >= 0.0 && self.conf_decay >= 0.0 && self.max_speed >= 0.0) {
            return err("jitter, drift, conf_decay and max_speed must be non-negative");
        }
        if !(0.0..1.0).contains(&self.size_drift) {
            return err("size_drift must be in [0, 1)");
        }
        if !(self.min_span > 0.0 && self.min_span <= 1.0) {
            return err("min_span must be in (0, 1]");
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|c| format!("class{c:02}")).collect()
    }

    pub fn detector(&self, gts: &[GroundTruthObject]) -> SyntheticDetector {
        SyntheticDetector::new(gts, self.a, self.b, self.sigma_det, self.seed)
    }

    pub fn tracker(&self, gts: &[GroundTruthObject]) -> GtFollowTracker {
        GtFollowTracker::new(gts, self.drift, self.conf_decay, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: SimConfig,
    pub classes: Vec<String>,
    pub videos: Vec<VideoMeta>,
    pub ground_truth: Vec<GroundTruthObject>,
    pub proposals: Vec<Proposal>,
}

impl World {
    pub fn schema(&self) -> Result<Schema> {
        Schema::new(self.classes.clone(), self.videos.clone())
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn instance_track(cfg: &SimConfig, video: &str, instance: usize) -> (usize, usize, Vec<BoundingBox>) {
    let mut rng = SeedKey::new(cfg.seed).str("instance").str(video).u64(instance as u64).rng();
    let (w, h) = (cfg.width, cfg.height);
    let class_id = rng.random_range(0..cfg.classes);
    let w0 = rng.random_range(0.15..0.35) * w;
    let h0 = rng.random_range(0.15..0.35) * h;
    let mut size_change = || {
        if cfg.size_drift > 0.0 {
            1.0 + rng.random_range(-cfg.size_drift..cfg.size_drift)
        } else {
            1.0
        }
    };
    let (w1, h1) = (w0 * size_change(), h0 * size_change());

    let min_len = ((cfg.min_span * cfg.frames as f64).ceil() as usize).clamp(1, cfg.frames);
    let len = rng.random_range(min_len..=cfg.frames);
    let start = rng.random_range(0..=cfg.frames - len);

    let cx0 = rng.random_range(w0 / 2.0..w - w0 / 2.0);
    let cy0 = rng.random_range(h0 / 2.0..h - h0 / 2.0);
    let mut velocity = || {
        if cfg.max_speed > 0.0 {
            rng.random_range(-cfg.max_speed..cfg.max_speed)
        } else {
            0.0
        }
    };
    let (vx, vy) = (velocity(), velocity());
    let steps = (len - 1) as f64;
    let cx1 = (cx0 + vx * steps).clamp(w1 / 2.0, w - w1 / 2.0);
    let cy1 = (cy0 + vy * steps).clamp(h1 / 2.0, h - h1 / 2.0);

    // Corners are affine in t, so a box inside the frame at both ends stays
    // inside throughout; the clamp only absorbs rounding.
    let boxes = (0..len)
        .map(|i| {
            let t = if len > 1 { i as f64 / steps } else { 0.0 };
            let b = BoundingBox::from_center(lerp(cx0, cx1, t), lerp(cy0, cy1, t), lerp(w0, w1, t), lerp(h0, h1, t))
                .expect("positive size");
            clamp_box(&b, w, h).expect("inside frame")
        })
        .collect();
    (class_id, start, boxes)
}

fn jittered<R: Rng>(b: &BoundingBox, jitter: f64, width: f64, height: f64, rng: &mut R) -> Option<BoundingBox> {
    if jitter == 0.0 {
        return Some(*b);
    }
    let nx = Normal::new(0.0, jitter * b.width()).ok()?;
    let ny = Normal::new(0.0, jitter * b.height()).ok()?;
    for _ in 0..10 {
        let c = BoundingBox::new(
            b.x1() + nx.sample(rng),
            b.y1() + ny.sample(rng),
            b.x2() + nx.sample(rng),
            b.y2() + ny.sample(rng),
        )
        .and_then(|c| clamp_box(&c, width, height));
        if let Ok(c) = c {
            return Some(c);
        }
    }
    None
}

fn background<R: Rng>(width: f64, height: f64, rng: &mut R) -> BoundingBox {
    let bw = rng.random_range(0.1..0.4) * width;
    let bh = rng.random_range(0.1..0.4) * height;
    let x1 = rng.random_range(0.0..width - bw);
    let y1 = rng.random_range(0.0..height - bh);
    BoundingBox::new(x1, y1, x1 + bw, y1 + bh).expect("positive size")
}

/// Generates a synthetic dataset; identical configs give identical worlds.
pub fn generate_world(cfg: &SimConfig) -> Result<World> {
    cfg.validate()?;
    let classes = cfg.class_names();
    let mut videos = Vec::with_capacity(cfg.videos);
    let mut ground_truth = Vec::new();
    let mut proposals = Vec::new();

    for v in 0..cfg.videos {
        let video_id = format!("vid{v:04}");
        videos.push(VideoMeta {
            video_id: video_id.clone(),
            frame_count: cfg.frames,
            width: cfg.width,
            height: cfg.height,
        });
        let tracks: Vec<_> = (0..cfg.instances_per_video).map(|i| instance_track(cfg, &video_id, i)).collect();

        for frame in 0..cfg.frames {
            let mut rng = SeedKey::new(cfg.seed).str("proposals").str(&video_id).u64(frame as u64).rng();
            let mut frame_props = Vec::with_capacity(cfg.proposals_per_frame);
            for (instance_id, (class_id, start, boxes)) in tracks.iter().enumerate() {
                let Some(b) = frame.checked_sub(*start).and_then(|i| boxes.get(i)) else {
                    continue;
                };
                ground_truth.push(GroundTruthObject {
                    video_id: video_id.clone(),
                    frame,
                    class_id: *class_id,
                    instance_id,
                    bbox: *b,
                });
                for _ in 0..cfg.object_proposals {
                    if let Some(p) = jittered(b, cfg.jitter, cfg.width, cfg.height, &mut rng) {
                        frame_props.push(p);
                    }
                }
            }
            while frame_props.len() < cfg.proposals_per_frame {
                frame_props.push(background(cfg.width, cfg.height, &mut rng));
            }
            proposals.extend(frame_props.into_iter().map(|bbox| Proposal { video_id: video_id.clone(), frame, bbox }));
        }
    }
    Ok(World { config: cfg.clone(), classes, videos, ground_truth, proposals })
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";
pub const PROPOSALS_FILE: &str = "proposals.jsonl";

/// Writes the world as manifest, ground truth and proposal files into `dir`;
/// returns the manifest path.
pub fn write_world(world: &World, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema = world.schema()?;
    dataio::write_ground_truth(&dir.join(GROUND_TRUTH_FILE), &world.ground_truth, &schema)?;
    dataio::write_proposals(&dir.join(PROPOSALS_FILE), &world.proposals)?;
    let manifest = DatasetManifest {
        classes: world.classes.clone(),
        videos: world.videos.clone(),
        ground_truth: Some(GROUND_TRUTH_FILE.into()),
        proposals: Some(PROPOSALS_FILE.into()),
        detections: None,
        simulation: Some(world.config.clone()),
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join(MANIFEST_FILE);
    dataio::write_manifest(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_instance_repeats_its_box() {
        let cfg = SimConfig {
            videos: 1,
            frames: 10,
            instances_per_video: 1,
            max_speed: 0.0,
            size_drift: 0.0,
            min_span: 1.0,
            ..Default::default()
        };
        let w = generate_world(&cfg).unwrap();
        assert_eq!(w.ground_truth.len(), 10);
        assert!(w.ground_truth.iter().all(|g| g.bbox == w.ground_truth[0].bbox));
        assert_eq!(w.proposals.len(), 10 * cfg.proposals_per_frame);
    }

    #[test]
    fn rejects_empty_worlds() {
        for cfg in [
            SimConfig { instances_per_video: 0, ..Default::default() },
            SimConfig { frames: 0, ..Default::default() },
            SimConfig { videos: 0, ..Default::default() },
        ] {
            assert!(matches!(generate_world(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn trajectories_are_contiguous() {
        let w = generate_world(&SimConfig { seed: 3, ..Default::default() }).unwrap();
        for traj in dataio::trajectories(&w.ground_truth).values() {
            assert!(traj.windows(2).all(|p| p[1].frame == p[0].frame + 1));
            assert!(traj.len() >= 36);
        }
    }
}
