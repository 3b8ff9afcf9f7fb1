//! End-to-end orchestration over files.
//!
//! Every stage reads its inputs from and writes its outputs to the run
//! directory, so a run can resume from any stage. Work inside a stage is
//! split across `(video, class)` units (or tubelets) and results are always
//! collected in `(video id, class id)` order, so output bytes do not depend
//! on the worker count, which can be set with `TUBELET_WORKERS`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::{Ablation, Fusion, PipelineConfig, TrackerKind};
use crate::dataio::{self, DatasetManifest, Proposal, Schema};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::geometry::{Detection, GroundTruthObject};
use crate::oracles::{self, DetectorOracle, FileDetector, IouChainTracker, TrackerOracle};
use crate::perturb::{self, Combine, PerturbConfig};
use crate::proposal::{propose_tubelets, ProposalConfig, Tubelet};
use crate::tcn::{self, TcnModel, TrainConfig, TrainOutcome};

pub const WORKERS_ENV: &str = "TUBELET_WORKERS";

pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const WORLD_DIR: &str = "world";
    pub const FILTERED_PROPOSALS: &str = "filtered_proposals.jsonl";
    pub const DETECTIONS: &str = "detections.jsonl";
    pub const TUBELETS: &str = "tubelets.jsonl";
    pub const POOLED: &str = "pooled.jsonl";
    pub const MODELS_DIR: &str = "models";
    pub const RESCORED: &str = "rescored.jsonl";
    pub const REPORT: &str = "report.jsonl";
    pub const REPORT_TABLE: &str = "report.txt";

    /// Pooled tubelets of the `i`-th scheme alone.
    pub fn pooled_scheme(i: usize) -> String {
        format!("pooled_s{i}.jsonl")
    }

    pub fn model(class: &str) -> String {
        format!("{class}.tcn")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Simulate,
    Filter,
    Propose,
    PerturbPool,
    TcnTrain,
    TcnRescore,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Simulate,
        Stage::Filter,
        Stage::Propose,
        Stage::PerturbPool,
        Stage::TcnTrain,
        Stage::TcnRescore,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Filter => "filter",
            Stage::Propose => "propose",
            Stage::PerturbPool => "perturb-pool",
            Stage::TcnTrain => "tcn-train",
            Stage::TcnRescore => "tcn-rescore",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<_> = Stage::ALL.iter().map(|s| s.name()).collect();
            Error::Config(format!("unknown stage `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

/// Runs `f` on a pool sized by `TUBELET_WORKERS` when it is set.
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let n: usize =
                v.parse().map_err(|_| Error::Config(format!("{WORKERS_ENV}=`{v}` is not a worker count")))?;
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

/// The detector a manifest implies: simulated when the manifest records
/// simulation parameters, else a lookup over its detections file.
pub fn detector_for(manifest: &DatasetManifest, gts: &[GroundTruthObject]) -> Result<Box<dyn DetectorOracle>> {
    if let Some(sim) = &manifest.simulation {
        return Ok(Box::new(sim.detector(gts)));
    }
    if manifest.detections.is_some() {
        let dets = dataio::read_detections(&manifest.detections_path()?, &manifest.schema()?)?;
        return Ok(Box::new(FileDetector::new(&dets)));
    }
    Err(Error::Config("manifest has neither simulation parameters nor a detections file to score with".into()))
}

pub fn tracker_for(
    kind: TrackerKind,
    manifest: &DatasetManifest,
    gts: &[GroundTruthObject],
    filtered: &[Proposal],
) -> Result<Box<dyn TrackerOracle>> {
    match kind {
        TrackerKind::GtFollow => {
            let sim = manifest.simulation.as_ref().ok_or_else(|| {
                Error::Config("the gt_follow tracker needs a simulated dataset; use iou_chain".into())
            })?;
            Ok(Box::new(sim.tracker(gts)))
        }
        TrackerKind::IouChain => Ok(Box::new(IouChainTracker::new(filtered))),
    }
}

/// Filters each frame's proposals and scores the survivors for every class.
/// Detections are ordered by video, frame, proposal, then class.
pub fn filter_and_score(
    schema: &Schema,
    proposals: &[Proposal],
    detector: &dyn DetectorOracle,
    threshold: f64,
) -> (Vec<Proposal>, Vec<Detection>) {
    let mut by_frame: BTreeMap<(&str, usize), Vec<_>> = BTreeMap::new();
    for p in proposals {
        by_frame.entry((p.video_id.as_str(), p.frame)).or_default().push(p.bbox);
    }
    let classes: Vec<usize> = (0..schema.num_classes()).collect();
    let units: Vec<_> = by_frame.into_iter().collect();
    let per_frame: Vec<(Vec<Proposal>, Vec<Detection>)> = units
        .par_iter()
        .map(|((video, frame), boxes)| {
            let kept = oracles::filter_proposals(boxes, detector, video, *frame, &classes, threshold);
            let scores: Vec<Vec<f64>> =
                classes.iter().map(|&c| detector.score_boxes(video, *frame, c, &kept)).collect();
            let mut dets = Vec::with_capacity(kept.len() * classes.len());
            for (i, b) in kept.iter().enumerate() {
                for &c in &classes {
                    dets.push(Detection {
                        video_id: video.to_string(),
                        frame: *frame,
                        class_id: c,
                        score: scores[c][i],
                        bbox: *b,
                    });
                }
            }
            let props =
                kept.into_iter().map(|bbox| Proposal { video_id: video.to_string(), frame: *frame, bbox }).collect();
            (props, dets)
        })
        .collect();
    let mut props = Vec::new();
    let mut dets = Vec::new();
    for (p, d) in per_frame {
        props.extend(p);
        dets.extend(d);
    }
    (props, dets)
}

/// Tubelet proposals for every `(video, class)`, in that order.
pub fn propose_all(
    schema: &Schema,
    detections: &[Detection],
    tracker: &dyn TrackerOracle,
    detector: &dyn DetectorOracle,
    cfg: &ProposalConfig,
) -> Result<Vec<Tubelet>> {
    let mut groups: HashMap<(&str, usize), Vec<Detection>> = HashMap::new();
    for d in detections {
        groups.entry((d.video_id.as_str(), d.class_id)).or_default().push(d.clone());
    }
    let units: Vec<_> = schema.videos().flat_map(|v| (0..schema.num_classes()).map(move |c| (v, c))).collect();
    let per_unit: Vec<Vec<Tubelet>> = units
        .par_iter()
        .map(|(video, class_id)| {
            let dets = groups.get(&(video.video_id.as_str(), *class_id)).map_or(&[][..], Vec::as_slice);
            propose_tubelets(video, *class_id, dets, tracker, detector, cfg)
        })
        .collect::<Result<_>>()?;
    Ok(per_unit.into_iter().flatten().collect())
}

/// Pools tubelets under each scheme of `cfg` separately, then combines them
/// as configured. Returns `(per-scheme outputs, combined output)`.
pub fn perturb_all(
    tubelets: &[Tubelet],
    detections: &[Detection],
    schema: &Schema,
    detector: &dyn DetectorOracle,
    cfg: &PerturbConfig,
) -> Result<(Vec<Vec<Tubelet>>, Vec<Tubelet>)> {
    cfg.validate()?;
    let per_scheme: Vec<Vec<Tubelet>> = cfg
        .schemes
        .iter()
        .map(|s| {
            let single = PerturbConfig { schemes: vec![*s], ..cfg.clone() };
            perturb::perturb_and_pool(tubelets, detections, schema, detector, &single)
        })
        .collect::<Result<_>>()?;
    let combined = match cfg.combine {
        Combine::Tubelets => per_scheme.iter().flatten().cloned().collect(),
        Combine::Candidates => perturb::perturb_and_pool(tubelets, detections, schema, detector, cfg)?,
    };
    Ok((per_scheme, combined))
}

/// Splits video ids into `(train, eval)`: the leading `train_fraction` by
/// id trains, the rest evaluates. If nothing is left to evaluate, every
/// video is evaluated.
pub fn split_videos(schema: &Schema, train_fraction: f64) -> (BTreeSet<String>, BTreeSet<String>) {
    let ids: Vec<String> = schema.videos().map(|v| v.video_id.clone()).collect();
    let n_train = ((train_fraction * ids.len() as f64).round() as usize).min(ids.len());
    let train: BTreeSet<String> = ids[..n_train].iter().cloned().collect();
    let mut eval: BTreeSet<String> = ids[n_train..].iter().cloned().collect();
    if eval.is_empty() {
        eval = ids.into_iter().collect();
    }
    (train, eval)
}

/// One model per class trained on the tubelets of `train_videos`; `None`
/// for classes without any training window.
pub fn train_all(
    schema: &Schema,
    tubelets: &[Tubelet],
    gts: &[GroundTruthObject],
    train_videos: &BTreeSet<String>,
    cfg: &TrainConfig,
) -> Result<Vec<Option<TrainOutcome>>> {
    (0..schema.num_classes())
        .map(|c| {
            let mine: Vec<Tubelet> =
                tubelets.iter().filter(|t| t.class_id == c && train_videos.contains(&t.video_id)).cloned().collect();
            let windows = tcn::training_windows(&mine, gts, cfg)?;
            if windows.is_empty() {
                return Ok(None);
            }
            let class_cfg = TrainConfig {
                seed: crate::seed::SeedKey::new(cfg.seed).str("tcn").u64(c as u64).value(),
                ..cfg.clone()
            };
            tcn::train(&windows, &class_cfg).map(Some)
        })
        .collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Re-scores every tubelet with its class model. Classes without a model
/// fall back to the logistic of the detection score.
pub fn rescore_all(tubelets: &[Tubelet], models: &[Option<TcnModel>], window_stride: usize) -> Result<Vec<Tubelet>> {
    tubelets
        .par_iter()
        .map(|t| match models.get(t.class_id).and_then(Option::as_ref) {
            Some(m) => tcn::rescore(m, t, window_stride),
            None => {
                let mut out = t.clone();
                for b in &mut out.boxes {
                    b.tcn_score = Some(logistic(b.det_score));
                }
                Ok(out)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    Det,
    Tcn(Fusion),
}

impl ScoreSource {
    fn score(self, b: &crate::proposal::TubeletBox) -> f64 {
        match self {
            ScoreSource::Det => b.det_score,
            ScoreSource::Tcn(Fusion::Tcn) => b.tcn_score.unwrap_or(0.0),
            ScoreSource::Tcn(Fusion::TcnTimesDet) => b.tcn_score.unwrap_or(0.0) * logistic(b.det_score),
        }
    }

    fn series(self, t: &Tubelet) -> Vec<f64> {
        match self {
            ScoreSource::Det => t.det_scores(),
            ScoreSource::Tcn(_) => t.boxes.iter().map(|b| self.score(b)).collect(),
        }
    }
}

/// One detection per tubelet box.
pub fn tubelet_detections(tubelets: &[Tubelet], source: ScoreSource) -> Vec<Detection> {
    tubelets
        .iter()
        .flat_map(|t| {
            t.boxes.iter().map(move |b| Detection {
                video_id: t.video_id.clone(),
                frame: b.frame,
                class_id: t.class_id,
                score: source.score(b),
                bbox: b.bbox,
            })
        })
        .collect()
}

/// AP, CorLoc and mean temporal variation of the score series, per class,
/// restricted to `videos`.
pub fn evaluate_tubelets(
    label: &str,
    tubelets: &[Tubelet],
    gts: &[GroundTruthObject],
    classes: &[String],
    videos: &BTreeSet<String>,
    source: ScoreSource,
    iou_thresh: f64,
) -> Result<EvalReport> {
    let tubelets: Vec<Tubelet> = tubelets.iter().filter(|t| videos.contains(&t.video_id)).cloned().collect();
    let gts: Vec<GroundTruthObject> = gts.iter().filter(|g| videos.contains(&g.video_id)).cloned().collect();
    let dets = tubelet_detections(&tubelets, source);
    let mut report = eval::mean_ap(label, &dets, &gts, classes, iou_thresh)?;
    let mut corlocs = Vec::new();
    for c in &mut report.classes {
        if c.gt > 0 {
            let v = eval::corloc(&dets, &gts, c.class_id)?;
            c.corloc = Some(v);
            corlocs.push(v);
        }
        let tvs: Vec<f64> = tubelets
            .iter()
            .filter(|t| t.class_id == c.class_id && t.len() >= 2)
            .map(|t| eval::temporal_variation(&source.series(t)))
            .collect();
        c.temporal_variation = (!tvs.is_empty()).then(|| tvs.iter().sum::<f64>() / tvs.len() as f64);
    }
    report.mean_corloc = (!corlocs.is_empty()).then(|| corlocs.iter().sum::<f64>() / corlocs.len() as f64);
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub reports: Vec<EvalReport>,
    /// Non-fatal events worth surfacing, e.g. classes without a TCN model.
    pub notes: Vec<String>,
}

impl PipelineOutcome {
    pub fn report(&self, label: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.label == label)
    }

    pub fn table(&self) -> String {
        self.reports.iter().map(EvalReport::to_table).collect::<Vec<_>>().join("\n")
    }
}

pub const BASELINE_LABEL: &str = "baseline";

pub fn combined_label(cfg: &PerturbConfig) -> String {
    cfg.schemes.iter().map(ToString::to_string).collect::<Vec<_>>().join("+")
}

pub fn tcn_label(cfg: &PerturbConfig) -> String {
    format!("{}+TCN", combined_label(cfg))
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, name: &str, stage: Stage, producer: Stage) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingStageInput { stage: stage.to_string(), producer: producer.to_string(), path: p })
        }
    }

    fn manifest_path(&self) -> PathBuf {
        match &self.cfg.pipeline.manifest {
            Some(p) => p.clone(),
            None => self.path(files::WORLD_DIR).join(oracles::synth::MANIFEST_FILE),
        }
    }

    fn stage_enabled(&self, stage: Stage) -> bool {
        match self.cfg.pipeline.ablation {
            Ablation::Baseline => matches!(stage, Stage::Simulate | Stage::Filter | Stage::Propose | Stage::Eval),
            Ablation::Perturb => !matches!(stage, Stage::TcnTrain | Stage::TcnRescore),
            Ablation::Full => true,
        }
    }
}

/// Runs the pipeline into `out`, starting at stage `from`.
///
/// Stages before `from` are skipped and their outputs must already exist
/// in `out`. The effective configuration is written to `out/config.toml`.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path, from: Stage) -> Result<PipelineOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    std::fs::write(out.join(files::CONFIG), cfg.to_toml()).map_err(|e| Error::io(out, e))?;
    with_workers(|| run_stages(&Run { cfg, out }, from))?
}

fn run_stages(run: &Run<'_>, from: Stage) -> Result<PipelineOutcome> {
    let cfg = run.cfg;
    let active = |s: Stage| s >= from && run.stage_enabled(s);
    let mut notes = Vec::new();

    // simulate
    if cfg.pipeline.manifest.is_none() && active(Stage::Simulate) {
        let world = oracles::generate_world(&cfg.sim)?;
        oracles::write_world(&world, &run.path(files::WORLD_DIR))?;
    }
    let manifest_path = run.manifest_path();
    if !manifest_path.is_file() {
        return Err(Error::MissingStageInput {
            stage: from.to_string(),
            producer: Stage::Simulate.to_string(),
            path: manifest_path,
        });
    }
    let manifest = dataio::read_manifest(&manifest_path)?;
    let schema = manifest.schema()?;
    let gts = match &manifest.ground_truth {
        Some(_) => dataio::read_ground_truth(&manifest.ground_truth_path()?, &schema)?,
        None => Vec::new(),
    };
    let detector = detector_for(&manifest, &gts)?;

    // filter + score
    if active(Stage::Filter) {
        let proposals = dataio::read_proposals(&manifest.proposals_path()?, &schema)?;
        let (kept, dets) = filter_and_score(&schema, &proposals, detector.as_ref(), cfg.filter.threshold);
        dataio::write_proposals(&run.path(files::FILTERED_PROPOSALS), &kept)?;
        dataio::write_detections(&run.path(files::DETECTIONS), &dets, &schema)?;
    }

    // propose
    if active(Stage::Propose) {
        let kept =
            dataio::read_proposals(&run.require(files::FILTERED_PROPOSALS, Stage::Propose, Stage::Filter)?, &schema)?;
        let dets = dataio::read_detections(&run.require(files::DETECTIONS, Stage::Propose, Stage::Filter)?, &schema)?;
        let tracker = tracker_for(cfg.tracker.kind, &manifest, &gts, &kept)?;
        let tubelets = propose_all(&schema, &dets, tracker.as_ref(), detector.as_ref(), &cfg.proposal)?;
        dataio::write_tubelets(&run.path(files::TUBELETS), &tubelets, &schema)?;
    }

    // perturb + max-pool
    if active(Stage::PerturbPool) {
        let tubelets =
            dataio::read_tubelets(&run.require(files::TUBELETS, Stage::PerturbPool, Stage::Propose)?, &schema)?;
        let dets =
            dataio::read_detections(&run.require(files::DETECTIONS, Stage::PerturbPool, Stage::Filter)?, &schema)?;
        let (per_scheme, combined) = perturb_all(&tubelets, &dets, &schema, detector.as_ref(), &cfg.perturb)?;
        for (i, pooled) in per_scheme.iter().enumerate() {
            dataio::write_tubelets(&run.path(&files::pooled_scheme(i)), pooled, &schema)?;
        }
        dataio::write_tubelets(&run.path(files::POOLED), &combined, &schema)?;
    }

    let (train_videos, eval_videos) = split_videos(&schema, cfg.pipeline.train_fraction);

    // TCN training
    if active(Stage::TcnTrain) {
        let pooled = dataio::read_tubelets(&run.require(files::POOLED, Stage::TcnTrain, Stage::PerturbPool)?, &schema)?;
        let outcomes = train_all(&schema, &pooled, &gts, &train_videos, &cfg.train)?;
        let dir = run.path(files::MODELS_DIR);
        for (c, outcome) in outcomes.iter().enumerate() {
            let path = dir.join(files::model(&schema.classes()[c]));
            match outcome {
                Some(o) => o.model.save(&path)?,
                None => {
                    // stale models from earlier runs must not be picked up
                    let _ = std::fs::remove_file(&path);
                }
            }
        }
    }

    // TCN re-scoring
    if active(Stage::TcnRescore) {
        let pooled =
            dataio::read_tubelets(&run.require(files::POOLED, Stage::TcnRescore, Stage::PerturbPool)?, &schema)?;
        let mut models = Vec::new();
        for class in schema.classes() {
            let path = run.path(files::MODELS_DIR).join(files::model(class));
            if path.is_file() {
                models.push(Some(TcnModel::load(&path)?));
            } else {
                notes.push(format!("no TCN model for class `{class}`; using the logistic of the detection score"));
                models.push(None);
            }
        }
        let rescored = rescore_all(&pooled, &models, cfg.train.window_stride)?;
        dataio::write_tubelets(&run.path(files::RESCORED), &rescored, &schema)?;
    }

    // evaluation
    let mut reports = Vec::new();
    if active(Stage::Eval) {
        let classes = schema.classes();
        let iou = cfg.eval.iou;
        let read = |name: &str, producer: Stage| -> Result<Vec<Tubelet>> {
            dataio::read_tubelets(&run.require(name, Stage::Eval, producer)?, &schema)
        };
        let baseline = read(files::TUBELETS, Stage::Propose)?;
        reports.push(evaluate_tubelets(BASELINE_LABEL, &baseline, &gts, classes, &eval_videos, ScoreSource::Det, iou)?);
        if run.stage_enabled(Stage::PerturbPool) {
            if cfg.perturb.schemes.len() > 1 {
                for (i, s) in cfg.perturb.schemes.iter().enumerate() {
                    let pooled = read(&files::pooled_scheme(i), Stage::PerturbPool)?;
                    reports.push(evaluate_tubelets(
                        &s.to_string(),
                        &pooled,
                        &gts,
                        classes,
                        &eval_videos,
                        ScoreSource::Det,
                        iou,
                    )?);
                }
            }
            let pooled = read(files::POOLED, Stage::PerturbPool)?;
            reports.push(evaluate_tubelets(
                &combined_label(&cfg.perturb),
                &pooled,
                &gts,
                classes,
                &eval_videos,
                ScoreSource::Det,
                iou,
            )?);
        }
        if run.stage_enabled(Stage::TcnRescore) {
            let rescored = read(files::RESCORED, Stage::TcnRescore)?;
            reports.push(evaluate_tubelets(
                &tcn_label(&cfg.perturb),
                &rescored,
                &gts,
                classes,
                &eval_videos,
                ScoreSource::Tcn(cfg.eval.fusion),
                iou,
            )?);
        }
        dataio::write_reports(&run.path(files::REPORT), &reports)?;
        let table = reports.iter().map(EvalReport::to_table).collect::<Vec<_>>().join("\n");
        std::fs::write(run.path(files::REPORT_TABLE), table).map_err(|e| Error::io(run.out, e))?;
    }
    Ok(PipelineOutcome { reports, notes })
}
