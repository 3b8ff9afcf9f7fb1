//! Temporal convolutional re-scoring of tubelets.

mod features;
mod model;
mod train;

pub use features::{
    build_features, make_labels, window_labels, window_starts, FeatureWindow, DET_SCORE_FLOOR, NUM_FEATURES,
};
pub use model::{ConvLayer, Gradients, TcnArchitecture, TcnModel};
pub use train::{accuracy, rescore, train, train_from, Sgd, TrainConfig, TrainOutcome, TrainingWindow};

use crate::error::Result;
use crate::geometry::GroundTruthObject;
use crate::proposal::Tubelet;

/// Feature windows with labels for every tubelet.
pub fn training_windows(
    tubelets: &[Tubelet],
    gts: &[GroundTruthObject],
    cfg: &TrainConfig,
) -> Result<Vec<TrainingWindow>> {
    let mut out = Vec::new();
    for t in tubelets {
        let labels = make_labels(t, gts, cfg.label_iou);
        for features in build_features(t, cfg.window, cfg.window_stride)? {
            let labels = window_labels(&labels, &features);
            out.push(TrainingWindow { features, labels });
        }
    }
    Ok(out)
}
