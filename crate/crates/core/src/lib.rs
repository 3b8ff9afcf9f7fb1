//! Tubelet-based video object detection.
//!
//! The pipeline turns per-frame object proposals into scored per-class
//! tubelets:
//!
//! 1. [`oracles::filter_proposals`] drops proposals no class scores above a
//!    threshold; the survivors are scored per class by a
//!    [`oracles::DetectorOracle`].
//! 2. [`proposal::propose_tubelets`] tracks high-confidence anchors in both
//!    directions with a [`oracles::TrackerOracle`], cutting tracks at low
//!    confidence and suppressing anchors already covered.
//! 3. [`perturb::perturb_and_pool`] replaces every tubelet box by the best
//!    scoring of its random perturbations and overlapping original
//!    detections.
//! 4. [`tcn`] re-scores each tubelet with a 1-D convolutional network over
//!    its detection score, tracking score and anchor offset series.
//! 5. [`eval`] computes mean AP and CorLoc.
//!
//! [`pipeline`] chains the stages over files in the [`dataio`] formats.

pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod oracles;
pub mod perturb;
pub mod pipeline;
pub mod proposal;
pub mod seed;
pub mod tcn;

pub use error::{Error, Result};
pub use geometry::{clamp_box, iou, nms, BoundingBox, Detection, GroundTruthObject};
pub use proposal::{Tubelet, TubeletBox};
