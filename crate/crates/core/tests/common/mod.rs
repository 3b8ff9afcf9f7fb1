//! Brute-force reference implementations and random fixtures shared by the
//! integration tests. Nothing here calls the library's own algorithms.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tubelet_core::{BoundingBox, Detection, GroundTruthObject};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).unwrap()
}

/// A box inside `[0, 100]²`. Coordinates snap to a coarse grid now and then
/// so that exact ties and touching edges show up.
pub fn random_box(rng: &mut impl Rng) -> BoundingBox {
    let coarse = rng.random_bool(0.3);
    let mut coord = |lo: f64, hi: f64| {
        let v = rng.random_range(lo..hi);
        if coarse {
            (v / 10.0).round() * 10.0
        } else {
            v
        }
    };
    loop {
        let x1 = coord(0.0, 90.0);
        let y1 = coord(0.0, 90.0);
        let x2 = x1 + coord(1.0, 40.0);
        let y2 = y1 + coord(1.0, 40.0);
        if let Ok(b) = BoundingBox::new(x1, y1, x2, y2) {
            return b;
        }
    }
}

/// Scores from a small set so that ties are common.
pub fn random_score(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.4) {
        f64::from(rng.random_range(0..5u8)) / 4.0
    } else {
        rng.random_range(-1.0..1.0)
    }
}

pub fn naive_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let iy = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = ix * iy;
    if inter == 0.0 {
        return 0.0;
    }
    let ua = (a.x2() - a.x1()) * (a.y2() - a.y1());
    let ub = (b.x2() - b.x1()) * (b.y2() - b.y1());
    (inter / (ua + ub - inter)).clamp(0.0, 1.0)
}

/// Textbook greedy NMS: repeatedly take the best remaining box (first one on
/// equal scores) and drop everything overlapping it at `thresh` or more.
pub fn naive_nms(boxes: &[BoundingBox], scores: &[f64], thresh: f64) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..boxes.len()).collect();
    let mut keep = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for k in 1..remaining.len() {
            if scores[remaining[k]] > scores[remaining[best]] {
                best = k;
            }
        }
        let i = remaining.remove(best);
        keep.push(i);
        remaining.retain(|&j| naive_iou(&boxes[i], &boxes[j]) < thresh);
    }
    keep
}

pub fn det(video: &str, frame: usize, class_id: usize, score: f64, bbox: BoundingBox) -> Detection {
    Detection { video_id: video.into(), frame, class_id, score, bbox }
}

pub fn gt(video: &str, frame: usize, class_id: usize, instance_id: usize, bbox: BoundingBox) -> GroundTruthObject {
    GroundTruthObject { video_id: video.into(), frame, class_id, instance_id, bbox }
}

/// Average precision by explicit enumeration of every precision/recall
/// cut-off: AP = sum over ranks k that add recall of
/// `(r_k - r_{k-1}) * max_{j >= k} p_j`.
pub fn brute_force_ap(dets: &[Detection], gts: &[GroundTruthObject], thresh: f64) -> f64 {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // insertion sort with the documented ranking: score desc, video, frame, input order
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && ranks_before(dets, order[j], order[j - 1]) {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut used = vec![false; gts.len()];
    let mut hits = Vec::new();
    for &i in &order {
        let d = &dets[i];
        let mut best: Option<usize> = None;
        let mut best_iou = f64::NEG_INFINITY;
        for (k, g) in gts.iter().enumerate() {
            if used[k] || g.video_id != d.video_id || g.frame != d.frame {
                continue;
            }
            let o = naive_iou(&d.bbox, &g.bbox);
            if o >= thresh && o > best_iou {
                best = Some(k);
                best_iou = o;
            }
        }
        if let Some(k) = best {
            used[k] = true;
        }
        hits.push(best.is_some());
    }
    let n = gts.len() as f64;
    let prefix: Vec<(f64, f64)> = (0..hits.len())
        .map(|k| {
            let tp = hits[..=k].iter().filter(|h| **h).count() as f64;
            (tp / (k + 1) as f64, tp / n)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for k in 0..prefix.len() {
        let r = prefix[k].1;
        if r > prev_r {
            let p = prefix[k..].iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
            ap += (r - prev_r) * p;
            prev_r = r;
        }
    }
    ap
}

fn ranks_before(dets: &[Detection], i: usize, j: usize) -> bool {
    let (a, b) = (&dets[i], &dets[j]);
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.video_id != b.video_id {
        return a.video_id < b.video_id;
    }
    if a.frame != b.frame {
        return a.frame < b.frame;
    }
    i < j
}

/// Random AP instance: up to `max_dets` detections and `max_gts` ground-truth
/// boxes over two videos of two frames each, one class.
pub fn random_ap_instance(
    rng: &mut impl Rng,
    max_dets: usize,
    max_gts: usize,
) -> (Vec<Detection>, Vec<GroundTruthObject>) {
    let videos = ["a", "b"];
    let ngt = rng.random_range(1..=max_gts);
    let gts: Vec<GroundTruthObject> = (0..ngt)
        .map(|k| {
            let v = videos[rng.random_range(0..2)];
            gt(v, rng.random_range(0..2), 0, k, random_box(rng))
        })
        .collect();
    let ndet = rng.random_range(0..=max_dets);
    let dets = (0..ndet)
        .map(|_| {
            // half the detections are perturbed copies of a ground-truth box
            if rng.random_bool(0.5) {
                let g = &gts[rng.random_range(0..gts.len())];
                let s = rng.random_range(0.0..6.0);
                let b = g.bbox;
                let moved = BoundingBox::new(b.x1() + s, b.y1(), b.x2() + s, b.y2()).unwrap();
                det(&g.video_id, g.frame, 0, random_score(rng), moved)
            } else {
                let v = videos[rng.random_range(0..2)];
                det(v, rng.random_range(0..2), 0, random_score(rng), random_box(rng))
            }
        })
        .collect();
    (dets, gts)
}

/// Eight fixed 3×50 feature windows with 0/1 targets. The target of a
/// position depends on the detection-score channel in a neighbourhood, so a
/// temporal convolution can fit it exactly.
pub fn overfit_windows() -> Vec<tubelet_core::tcn::TrainingWindow> {
    use tubelet_core::tcn::{FeatureWindow, TrainingWindow};
    let mut r = rng(99);
    (0..8)
        .map(|w| {
            let det: Vec<f64> = (0..50).map(|_| r.random_range(-1.5..1.5)).collect();
            let track: Vec<f64> = (0..50).map(|t| 1.0 - 0.01 * t as f64).collect();
            let offset: Vec<f64> = (0..50).map(|t| t as f64 / 50.0).collect();
            let labels = (0..50)
                .map(|t: usize| {
                    let lo = t.saturating_sub(1);
                    let hi = (t + 1).min(49);
                    let local: f64 = det[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
                    u8::from(local > 0.1 * (w % 3) as f64)
                })
                .collect();
            let mut data = ndarray::Array2::zeros((3, 50));
            for t in 0..50 {
                data[[0, t]] = det[t];
                data[[1, t]] = track[t];
                data[[2, t]] = offset[t];
            }
            TrainingWindow { features: FeatureWindow { start: 0, data, mask: vec![true; 50] }, labels }
        })
        .collect()
}
