//! Detector and tracker interfaces, their file-backed and synthetic
//! implementations, proposal filtering, and the synthetic world generator.

mod detector;
mod filter;
pub mod synth;
mod tracker;

pub use detector::{synthetic_detector_score, FileDetector, SyntheticDetector};
pub use filter::filter_proposals;
pub use synth::{generate_world, write_world, SimConfig, World};
pub use tracker::{GtFollowTracker, IouChainTracker};

use crate::dataio::VideoMeta;
use crate::geometry::{BoundingBox, Detection};

/// Scores arbitrary boxes for a class on a frame.
///
/// Implementations return exactly one score per input box and are pure given
/// their inputs and construction-time seed.
pub trait DetectorOracle: Sync {
    fn score_boxes(&self, video_id: &str, frame: usize, class_id: usize, boxes: &[BoundingBox]) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    /// Frame `steps` away from `anchor`, or `None` past the video boundary.
    pub fn offset(self, anchor: usize, steps: usize, frame_count: usize) -> Option<usize> {
        match self {
            Direction::Forward => anchor.checked_add(steps).filter(|f| *f < frame_count),
            Direction::Backward => anchor.checked_sub(steps),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackStep {
    pub frame: usize,
    pub bbox: BoundingBox,
    /// In `[0, 1]`.
    pub confidence: f64,
}

/// Follows an anchor detection through a video.
///
/// The returned steps start at the frame adjacent to the anchor and move
/// strictly monotonically toward the video boundary in `direction`. A tracker
/// may end the sequence before the boundary.
pub trait TrackerOracle: Sync {
    fn track(&self, video: &VideoMeta, class_id: usize, anchor: &Detection, direction: Direction) -> Vec<TrackStep>;
}
