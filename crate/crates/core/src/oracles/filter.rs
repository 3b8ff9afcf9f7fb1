use super::DetectorOracle;
use crate::geometry::BoundingBox;

/// Keeps the proposals whose best score over `classes` is at least
/// `threshold`, in input order.
pub fn filter_proposals(
    proposals: &[BoundingBox],
    oracle: &dyn DetectorOracle,
    video_id: &str,
    frame: usize,
    classes: &[usize],
    threshold: f64,
) -> Vec<BoundingBox> {
    let mut best = vec![f64::NEG_INFINITY; proposals.len()];
    for &c in classes {
        for (b, s) in best.iter_mut().zip(oracle.score_boxes(video_id, frame, c, proposals)) {
            *b = b.max(s);
        }
    }
    proposals.iter().zip(best).filter(|(_, s)| *s >= threshold).map(|(p, _)| *p).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scores box `i` of class `c` as `x1 - 10c`.
    struct Linear;

    impl DetectorOracle for Linear {
        fn score_boxes(&self, _: &str, _: usize, c: usize, boxes: &[BoundingBox]) -> Vec<f64> {
            boxes.iter().map(|b| b.x1() - 10.0 * c as f64).collect()
        }
    }

    #[test]
    fn keeps_boxes_by_best_class() {
        let boxes: Vec<_> = (0..5).map(|i| BoundingBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0).unwrap()).collect();
        assert_eq!(filter_proposals(&boxes, &Linear, "v", 0, &[0, 1], f64::NEG_INFINITY), boxes);
        let kept = filter_proposals(&boxes, &Linear, "v", 0, &[1, 0], 2.5);
        assert_eq!(kept, boxes[3..].to_vec());
        assert!(filter_proposals(&boxes, &Linear, "v", 0, &[], -1.1).is_empty());
    }
}
