//! Mean average precision, CorLoc, and the temporal-variation diagnostic.
//!
//! AP uses greedy matching at an IoU threshold and the all-points area under
//! the precision/recall curve with a monotone (non-increasing) precision
//! envelope.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{iou, Detection, GroundTruthObject};

pub const INTERPOLATION: &str = "all-points, monotone precision envelope";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub gt: usize,
}

/// Per-detection TP flags in ranked order, plus totals.
#[derive(Debug, Clone)]
pub struct RankedMatches {
    pub is_tp: Vec<bool>,
    pub counts: MatchCounts,
}

/// Ranks detections by score (ties: video id, frame, input order) and
/// greedily matches each to the unmatched same-frame ground truth of highest
/// IoU at or above `iou_thresh` (ties: ground-truth input order).
pub fn match_detections(dets: &[Detection], gts: &[GroundTruthObject], iou_thresh: f64) -> RankedMatches {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&dets[i], &dets[j]);
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.video_id.cmp(&b.video_id))
            .then_with(|| a.frame.cmp(&b.frame))
            .then_with(|| i.cmp(&j))
    });

    let mut by_frame: HashMap<(&str, usize), Vec<usize>> = HashMap::new();
    for (k, g) in gts.iter().enumerate() {
        by_frame.entry((&g.video_id, g.frame)).or_default().push(k);
    }
    let mut used = vec![false; gts.len()];
    let mut is_tp = Vec::with_capacity(dets.len());
    for i in order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for &k in by_frame.get(&(d.video_id.as_str(), d.frame)).into_iter().flatten() {
            if used[k] {
                continue;
            }
            let o = iou(&d.bbox, &gts[k].bbox);
            if o >= iou_thresh && best.is_none_or(|(_, b)| o > b) {
                best = Some((k, o));
            }
        }
        match best {
            Some((k, _)) => {
                used[k] = true;
                is_tp.push(true);
            }
            None => is_tp.push(false),
        }
    }
    let tp = is_tp.iter().filter(|t| **t).count();
    RankedMatches { counts: MatchCounts { tp, fp: is_tp.len() - tp, gt: gts.len() }, is_tp }
}

/// Area under the precision/recall curve of a ranked TP/FP sequence, with
/// precision made non-increasing in recall.
pub fn ap_from_ranked(is_tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return f64::NAN;
    }
    let mut precision = Vec::with_capacity(is_tp.len());
    let mut recall = Vec::with_capacity(is_tp.len());
    let mut tp = 0usize;
    for (i, &hit) in is_tp.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    ap
}

/// AP of one class. Errors when there is no ground truth.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruthObject], iou_thresh: f64) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::InvalidArgument("average precision undefined without ground truth".into()));
    }
    let m = match_detections(dets, gts, iou_thresh);
    Ok(ap_from_ranked(&m.is_tp, gts.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_id: usize,
    pub name: String,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    pub corloc: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub gt: usize,
    pub temporal_variation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub iou_threshold: f64,
    pub classes: Vec<ClassReport>,
    /// Mean over classes with at least one ground-truth object.
    pub mean_ap: Option<f64>,
    pub mean_corloc: Option<f64>,
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.4}", v));
        let width = self.classes.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut s = format!(
            "# {} (iou {}, AP: {})\n{:<width$}  {:>8}  {:>8}  {:>6}  {:>6}  {:>6}  {:>8}\n",
            self.label, self.iou_threshold, INTERPOLATION, "class", "AP", "CorLoc", "TP", "FP", "GT", "TV"
        );
        for c in &self.classes {
            s += &format!(
                "{:<width$}  {:>8}  {:>8}  {:>6}  {:>6}  {:>6}  {:>8}\n",
                c.name,
                fmt(c.ap),
                fmt(c.corloc),
                c.tp,
                c.fp,
                c.gt,
                fmt(c.temporal_variation)
            );
        }
        s += &format!("{:<width$}  {:>8}  {:>8}\n", "mean", fmt(self.mean_ap), fmt(self.mean_corloc));
        s
    }

    pub fn class(&self, class_id: usize) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }
}

fn split_by_class<T>(items: &[T], class_of: impl Fn(&T) -> usize, n: usize) -> Result<Vec<Vec<&T>>> {
    let mut out = vec![Vec::new(); n];
    for it in items {
        let c = class_of(it);
        out.get_mut(c).ok_or_else(|| Error::InvalidArgument(format!("class id {c} outside the class set")))?.push(it);
    }
    Ok(out)
}

/// Per-class AP and its mean over classes that have ground truth.
pub fn mean_ap(
    label: &str,
    dets: &[Detection],
    gts: &[GroundTruthObject],
    classes: &[String],
    iou_thresh: f64,
) -> Result<EvalReport> {
    let det_by = split_by_class(dets, |d| d.class_id, classes.len())?;
    let gt_by = split_by_class(gts, |g| g.class_id, classes.len())?;
    let mut reports = Vec::with_capacity(classes.len());
    for (c, name) in classes.iter().enumerate() {
        let d: Vec<Detection> = det_by[c].iter().map(|d| (*d).clone()).collect();
        let g: Vec<GroundTruthObject> = gt_by[c].iter().map(|g| (*g).clone()).collect();
        let m = match_detections(&d, &g, iou_thresh);
        reports.push(ClassReport {
            class_id: c,
            name: name.clone(),
            ap: (!g.is_empty()).then(|| ap_from_ranked(&m.is_tp, g.len())),
            corloc: None,
            tp: m.counts.tp,
            fp: m.counts.fp,
            gt: m.counts.gt,
            temporal_variation: None,
        });
    }
    let aps: Vec<f64> = reports.iter().filter_map(|r| r.ap).collect();
    if aps.is_empty() {
        return Err(Error::InvalidArgument("no class has ground truth".into()));
    }
    Ok(EvalReport {
        label: label.to_string(),
        iou_threshold: iou_thresh,
        classes: reports,
        mean_ap: Some(aps.iter().sum::<f64>() / aps.len() as f64),
        mean_corloc: None,
    })
}

/// Fraction of annotated frames of `class_id` whose top-scoring detection of
/// that class overlaps some ground truth of the class with IoU above 0.5.
/// Frames without any detection count as misses.
pub fn corloc(dets: &[Detection], gts: &[GroundTruthObject], class_id: usize) -> Result<f64> {
    let mut frames: HashMap<(&str, usize), Vec<&GroundTruthObject>> = HashMap::new();
    for g in gts.iter().filter(|g| g.class_id == class_id) {
        frames.entry((&g.video_id, g.frame)).or_default().push(g);
    }
    if frames.is_empty() {
        return Err(Error::InvalidArgument(format!("no annotated frames for class {class_id}")));
    }
    let mut top: HashMap<(&str, usize), &Detection> = HashMap::new();
    for d in dets.iter().filter(|d| d.class_id == class_id) {
        let key = (d.video_id.as_str(), d.frame);
        if !frames.contains_key(&key) {
            continue;
        }
        top.entry(key)
            .and_modify(|best| {
                if d.score > best.score {
                    *best = d;
                }
            })
            .or_insert(d);
    }
    let hits = frames
        .iter()
        .filter(|(key, gs)| top.get(*key).is_some_and(|d| gs.iter().any(|g| iou(&d.bbox, &g.bbox) > 0.5)))
        .count();
    Ok(hits as f64 / frames.len() as f64)
}

/// Per-class CorLoc and its mean over classes with annotated frames.
pub fn corloc_report(
    label: &str,
    dets: &[Detection],
    gts: &[GroundTruthObject],
    classes: &[String],
) -> Result<EvalReport> {
    let mut reports = Vec::new();
    for (c, name) in classes.iter().enumerate() {
        let has_gt = gts.iter().any(|g| g.class_id == c);
        reports.push(ClassReport {
            class_id: c,
            name: name.clone(),
            ap: None,
            corloc: if has_gt { Some(corloc(dets, gts, c)?) } else { None },
            tp: 0,
            fp: 0,
            gt: gts.iter().filter(|g| g.class_id == c).count(),
            temporal_variation: None,
        });
    }
    let vals: Vec<f64> = reports.iter().filter_map(|r| r.corloc).collect();
    if vals.is_empty() {
        return Err(Error::InvalidArgument("no class has annotated frames".into()));
    }
    Ok(EvalReport {
        label: label.to_string(),
        iou_threshold: 0.5,
        classes: reports,
        mean_ap: None,
        mean_corloc: Some(vals.iter().sum::<f64>() / vals.len() as f64),
    })
}

/// Mean absolute first difference; 0 for fewer than two values.
pub fn temporal_variation(series: &[f64]) -> f64 {
    if series.len() < 2 {
        return 0.0;
    }
    series.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (series.len() - 1) as f64
}
