//! Tubelet box perturbation and spatial max-pooling.
//!
//! Two candidate generators: `R(n, r)` draws `n` boxes around each tubelet
//! box by offsetting each corner coordinate independently with
//! `dx ~ U(-r*w, r*w)` and `dy ~ U(-r*h, r*h)`; `O(t)` takes the original
//! detections on the frame overlapping the tubelet box by at least `t`.
//! Max-pooling then replaces every box by its best-scoring candidate.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Schema;
use crate::error::{Error, Result};
use crate::geometry::{clamp_box, iou, BoundingBox, Detection};
use crate::oracles::DetectorOracle;
use crate::proposal::Tubelet;
use crate::seed::SeedKey;

const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scheme {
    /// `n` random samples per box with offset ratio `r`.
    Random { n: usize, r: f64 },
    /// Original detections with IoU at least `t`.
    Original { t: f64 },
}

impl Scheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Scheme::Random { n, r } if n >= 1 && r >= 0.0 && r.is_finite() => Ok(()),
            Scheme::Original { t } if (0.0..=1.0).contains(&t) => Ok(()),
            _ => Err(Error::Config(format!("invalid perturbation scheme {self}"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Random { n, r } => write!(f, "R({n},{r})"),
            Scheme::Original { t } => write!(f, "O({t})"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse perturbation scheme `{s}`; expected R(n,r) or O(t)"));
        let s = s.trim();
        let inner = |prefix: char| {
            s.strip_prefix(prefix)
                .and_then(|rest| rest.trim().strip_prefix('('))
                .and_then(|rest| rest.strip_suffix(')'))
        };
        let scheme = if let Some(args) = inner('R') {
            let (n, r) = args.split_once(',').ok_or_else(bad)?;
            Scheme::Random { n: n.trim().parse().map_err(|_| bad())?, r: r.trim().parse().map_err(|_| bad())? }
        } else if let Some(t) = inner('O') {
            Scheme::Original { t: t.trim().parse().map_err(|_| bad())? }
        } else {
            return Err(bad());
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> Self {
        s.to_string()
    }
}

/// How several schemes are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// Each scheme pools its own copy of every tubelet; the outputs are
    /// concatenated, so the tubelet count is multiplied by the scheme count.
    #[default]
    Tubelets,
    /// The candidate sets of all schemes are merged and pooled once.
    Candidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub schemes: Vec<Scheme>,
    pub combine: Combine,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            schemes: vec![Scheme::Random { n: 20, r: 0.2 }, Scheme::Original { t: 0.5 }],
            combine: Combine::Tubelets,
            seed: 0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one perturbation scheme is required".into()));
        }
        self.schemes.iter().try_for_each(Scheme::validate)
    }
}

/// `n` boxes around `b`, each corner coordinate offset independently and
/// uniformly within `r` times the box width (x) or height (y), then clipped
/// to the frame. Degenerate draws are redrawn up to ten times, then skipped.
pub fn random_perturb<R: Rng + ?Sized>(
    b: &BoundingBox,
    r: f64,
    n: usize,
    width: f64,
    height: f64,
    rng: &mut R,
) -> Vec<BoundingBox> {
    (0..n).filter_map(|_| random_sample(b, r, width, height, rng)).collect()
}

fn random_sample<R: Rng + ?Sized>(
    b: &BoundingBox,
    r: f64,
    width: f64,
    height: f64,
    rng: &mut R,
) -> Option<BoundingBox> {
    let (rx, ry) = (r * b.width(), r * b.height());
    let mut offset = |half: f64| (2.0 * rng.random::<f64>() - 1.0) * half;
    for _ in 0..=MAX_REDRAWS {
        let x1 = b.x1() + offset(rx);
        let y1 = b.y1() + offset(ry);
        let x2 = b.x2() + offset(rx);
        let y2 = b.y2() + offset(ry);
        if let Ok(s) = BoundingBox::new(x1, y1, x2, y2).and_then(|s| clamp_box(&s, width, height)) {
            return Some(s);
        }
    }
    None
}

/// Boxes of the frame's original detections with IoU at least `t` against `b`.
pub fn original_replacement_candidates(b: &BoundingBox, frame_detections: &[Detection], t: f64) -> Vec<BoundingBox> {
    frame_detections.iter().filter(|d| iou(&d.bbox, b) >= t).map(|d| d.bbox).collect()
}

/// Replaces each tubelet box by the highest-scoring of itself and its
/// augmented candidates.
///
/// `augmented[i]` lists the extra candidates of box `i`; the original box
/// is always a candidate and keeps its stored `det_score`. Ties go to the
/// original, then to the lowest candidate index. Track scores, anchor
/// offsets and the frame span are left unchanged.
pub fn max_pool(tubelet: &Tubelet, augmented: &[Vec<BoundingBox>], oracle: &dyn DetectorOracle) -> Result<Tubelet> {
    if augmented.len() != tubelet.boxes.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} candidate lists", tubelet.boxes.len()),
            actual: augmented.len().to_string(),
        });
    }
    let mut pooled = tubelet.clone();
    for (tb, cands) in pooled.boxes.iter_mut().zip(augmented) {
        if cands.is_empty() {
            continue;
        }
        let scores = oracle.score_boxes(&tubelet.video_id, tb.frame, tubelet.class_id, cands);
        for (c, s) in cands.iter().zip(scores) {
            if s > tb.det_score {
                tb.det_score = s;
                tb.bbox = *c;
            }
        }
    }
    Ok(pooled)
}

type FrameDetections<'a> = HashMap<(&'a str, usize, usize), Vec<Detection>>;

fn index_detections(dets: &[Detection]) -> FrameDetections<'_> {
    let mut map: FrameDetections<'_> = HashMap::new();
    for d in dets {
        map.entry((d.video_id.as_str(), d.frame, d.class_id)).or_default().push(d.clone());
    }
    map
}

fn tubelet_key(seed: u64, t: &Tubelet) -> SeedKey {
    let anchor = t.anchor_box().map(|b| b.bbox);
    let key = SeedKey::new(seed).str("perturb").str(&t.video_id).u64(t.class_id as u64).u64(t.anchor_frame as u64);
    match anchor {
        Some(b) => key.bbox(&b),
        None => key,
    }
}

/// Candidate lists of one scheme for every box of `tubelet`.
pub fn scheme_candidates(
    tubelet: &Tubelet,
    scheme: Scheme,
    detections: &HashMap<(&str, usize, usize), Vec<Detection>>,
    frame_size: (f64, f64),
    seed: u64,
) -> Vec<Vec<BoundingBox>> {
    let key = tubelet_key(seed, tubelet).str(&scheme.to_string());
    tubelet
        .boxes
        .iter()
        .map(|tb| match scheme {
            Scheme::Random { n, r } => (0..n)
                .filter_map(|i| {
                    let mut rng = key.u64(tb.frame as u64).u64(i as u64).rng();
                    random_sample(&tb.bbox, r, frame_size.0, frame_size.1, &mut rng)
                })
                .collect(),
            Scheme::Original { t } => detections
                .get(&(tubelet.video_id.as_str(), tb.frame, tubelet.class_id))
                .map(|d| original_replacement_candidates(&tb.bbox, d, t))
                .unwrap_or_default(),
        })
        .collect()
}

/// Perturbs and pools every tubelet under `cfg`.
///
/// With [`Combine::Tubelets`] the output holds one pooled copy of the input
/// per scheme, scheme-major. With [`Combine::Candidates`] it holds one
/// pooled tubelet per input.
pub fn perturb_and_pool(
    tubelets: &[Tubelet],
    detections: &[Detection],
    schema: &Schema,
    oracle: &dyn DetectorOracle,
    cfg: &PerturbConfig,
) -> Result<Vec<Tubelet>> {
    cfg.validate()?;
    let index = index_detections(detections);
    let frame_size = |t: &Tubelet| {
        schema
            .video(&t.video_id)
            .map(|v| (v.width, v.height))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown video `{}`", t.video_id)))
    };
    let pool_one = |t: &Tubelet, schemes: &[Scheme]| -> Result<Tubelet> {
        let size = frame_size(t)?;
        let mut cands = vec![Vec::new(); t.boxes.len()];
        for s in schemes {
            for (all, more) in cands.iter_mut().zip(scheme_candidates(t, *s, &index, size, cfg.seed)) {
                all.extend(more);
            }
        }
        max_pool(t, &cands, oracle)
    };
    match cfg.combine {
        Combine::Tubelets => cfg
            .schemes
            .iter()
            .flat_map(|s| tubelets.iter().map(move |t| (t, s)))
            .map(|(t, s)| pool_one(t, std::slice::from_ref(s)))
            .collect(),
        Combine::Candidates => tubelets.iter().map(|t| pool_one(t, &cfg.schemes)).collect(),
    }
}
