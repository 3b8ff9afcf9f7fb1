//! Newline-delimited JSON records for manifests, ground truth, proposals,
//! detections, tubelets and evaluation reports.
//!
//! Every file holds one JSON object per line; blank lines are ignored.
//! Readers validate each record against the dataset schema (class names,
//! video ids, frame ranges, box invariants) and report the offending line.
//! Floats are written in their shortest round-trip form; non-finite scores
//! are written as the strings `"inf"` / `"-inf"`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::geometry::{BoundingBox, Detection, GroundTruthObject};
use crate::oracles::SimConfig;
use crate::proposal::{anchor_offsets, Tubelet, TubeletBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoMeta {
    #[serde(rename = "video")]
    pub video_id: String,
    pub frame_count: usize,
    pub width: f64,
    pub height: f64,
}

/// A class-agnostic object proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub video_id: String,
    pub frame: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Index is the class id.
    pub classes: Vec<String>,
    pub videos: Vec<VideoMeta>,
    pub ground_truth: Option<PathBuf>,
    pub proposals: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    /// Parameters of the synthetic world this dataset was generated from.
    pub simulation: Option<SimConfig>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn schema(&self) -> Result<Schema> {
        Schema::new(self.classes.clone(), self.videos.clone())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn required(&self, what: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
        p.as_ref().map(|p| self.resolve(p)).ok_or_else(|| Error::Resolution {
            what: format!("{what} (not listed in manifest)"),
            path: self.base_dir.clone(),
        })
    }

    pub fn ground_truth_path(&self) -> Result<PathBuf> {
        self.required("ground truth", &self.ground_truth)
    }

    pub fn proposals_path(&self) -> Result<PathBuf> {
        self.required("proposals", &self.proposals)
    }

    pub fn detections_path(&self) -> Result<PathBuf> {
        self.required("detections", &self.detections)
    }
}

/// Class names and video metadata that records are validated against.
#[derive(Debug, Clone)]
pub struct Schema {
    classes: Vec<String>,
    class_index: HashMap<String, usize>,
    videos: BTreeMap<String, VideoMeta>,
}

impl Schema {
    pub fn new(classes: Vec<String>, videos: Vec<VideoMeta>) -> Result<Self> {
        let mut class_index = HashMap::new();
        for (i, c) in classes.iter().enumerate() {
            if class_index.insert(c.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate class name `{c}`")));
            }
        }
        let mut by_id = BTreeMap::new();
        for v in videos {
            if v.frame_count == 0 {
                return Err(Error::Config(format!("video `{}` has zero frames", v.video_id)));
            }
            if !(v.width > 0.0 && v.height > 0.0) {
                return Err(Error::Config(format!("video `{}` has non-positive size", v.video_id)));
            }
            let id = v.video_id.clone();
            if by_id.insert(id.clone(), v).is_some() {
                return Err(Error::Config(format!("duplicate video id `{id}`")));
            }
        }
        Ok(Self { classes, class_index, videos: by_id })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_index.get(name).copied()
    }

    pub fn class_name(&self, id: usize) -> Option<&str> {
        self.classes.get(id).map(String::as_str)
    }

    pub fn video(&self, id: &str) -> Option<&VideoMeta> {
        self.videos.get(id)
    }

    /// Videos in ascending id order.
    pub fn videos(&self) -> impl Iterator<Item = &VideoMeta> {
        self.videos.values()
    }

    fn check_frame(&self, video: &str, frame: usize) -> std::result::Result<&VideoMeta, String> {
        let meta = self.videos.get(video).ok_or_else(|| format!("unknown video `{video}`"))?;
        if frame >= meta.frame_count {
            return Err(format!("frame {frame} out of range for video `{video}` with {} frames", meta.frame_count));
        }
        Ok(meta)
    }

    fn check_class(&self, name: &str) -> std::result::Result<usize, String> {
        self.class_id(name).ok_or_else(|| format!("unknown class `{name}`"))
    }

    fn check_class_id(&self, id: usize) -> Result<&str> {
        self.class_name(id).ok_or_else(|| Error::InvalidArgument(format!("class id {id} outside the class set")))
    }
}

mod score_format {
    //! Scores may be ±inf (e.g. a file-backed detector with no match).
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    fn decode<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Str(s) => Err(E::custom(format!("invalid score `{s}`"))),
        }
    }

    fn encode<S: Serializer>(v: f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v == f64::INFINITY {
            s.serialize_str("inf")
        } else if v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            Err(serde::ser::Error::custom("NaN score"))
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        encode(*v, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        struct One(f64);
        impl serde::Serialize for One {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                super::encode(self.0, s)
            }
        }

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&One(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(decode::<D::Error>)
                .collect::<Result<_, _>>()
                .map_err(D::Error::custom)
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    video: String,
    frame: usize,
    class: String,
    #[serde(with = "score_format")]
    score: f64,
    #[serde(rename = "box")]
    bbox: BoundingBox,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthRecord {
    video: String,
    frame: usize,
    class: String,
    instance: usize,
    #[serde(rename = "box")]
    bbox: BoundingBox,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalRecord {
    video: String,
    frame: usize,
    #[serde(rename = "box")]
    bbox: BoundingBox,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TubeletRecord {
    video: String,
    class: String,
    anchor_frame: usize,
    start_frame: usize,
    boxes: Vec<BoundingBox>,
    #[serde(with = "score_format::vec")]
    det_scores: Vec<f64>,
    track_scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tcn_scores: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    proposals: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detections: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    simulation: Option<SimConfig>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ManifestRecord {
    Dataset(DatasetRecord),
    Video(VideoMeta),
}

fn read_records<T, F>(path: &Path, mut on_record: F) -> Result<()>
where
    T: DeserializeOwned,
    F: FnMut(usize, T) -> std::result::Result<(), String>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        on_record(line_no, record).map_err(|message| Error::Schema {
            path: path.to_path_buf(),
            line: line_no,
            message,
        })?;
    }
    Ok(())
}

fn write_records<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path, schema: &Schema) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    read_records(path, |_, r: DetectionRecord| {
        schema.check_frame(&r.video, r.frame)?;
        let class_id = schema.check_class(&r.class)?;
        if r.score.is_nan() {
            return Err("NaN score".into());
        }
        out.push(Detection { video_id: r.video, frame: r.frame, class_id, score: r.score, bbox: r.bbox });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_detections(path: &Path, dets: &[Detection], schema: &Schema) -> Result<()> {
    let records = dets
        .iter()
        .map(|d| {
            Ok(DetectionRecord {
                video: d.video_id.clone(),
                frame: d.frame,
                class: schema.check_class_id(d.class_id)?.to_owned(),
                score: d.score,
                bbox: d.bbox,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_records(path, records)
}

pub fn read_ground_truth(path: &Path, schema: &Schema) -> Result<Vec<GroundTruthObject>> {
    let mut out = Vec::new();
    read_records(path, |_, r: GroundTruthRecord| {
        schema.check_frame(&r.video, r.frame)?;
        let class_id = schema.check_class(&r.class)?;
        out.push(GroundTruthObject {
            video_id: r.video,
            frame: r.frame,
            class_id,
            instance_id: r.instance,
            bbox: r.bbox,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_ground_truth(path: &Path, gts: &[GroundTruthObject], schema: &Schema) -> Result<()> {
    let records = gts
        .iter()
        .map(|g| {
            Ok(GroundTruthRecord {
                video: g.video_id.clone(),
                frame: g.frame,
                class: schema.check_class_id(g.class_id)?.to_owned(),
                instance: g.instance_id,
                bbox: g.bbox,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_records(path, records)
}

/// Groups ground truth by `(video, instance)`, each trajectory sorted by frame.
pub fn trajectories(gts: &[GroundTruthObject]) -> BTreeMap<(String, usize), Vec<GroundTruthObject>> {
    let mut map: BTreeMap<(String, usize), Vec<GroundTruthObject>> = BTreeMap::new();
    for g in gts {
        map.entry((g.video_id.clone(), g.instance_id)).or_default().push(g.clone());
    }
    for traj in map.values_mut() {
        traj.sort_by_key(|g| g.frame);
    }
    map
}

pub fn read_proposals(path: &Path, schema: &Schema) -> Result<Vec<Proposal>> {
    let mut out = Vec::new();
    read_records(path, |_, r: ProposalRecord| {
        schema.check_frame(&r.video, r.frame)?;
        out.push(Proposal { video_id: r.video, frame: r.frame, bbox: r.bbox });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_proposals(path: &Path, proposals: &[Proposal]) -> Result<()> {
    write_records(
        path,
        proposals.iter().map(|p| ProposalRecord { video: p.video_id.clone(), frame: p.frame, bbox: p.bbox }),
    )
}

fn tubelet_from_record(r: TubeletRecord, schema: &Schema) -> std::result::Result<Tubelet, String> {
    let class_id = schema.check_class(&r.class)?;
    let n = r.boxes.len();
    if n == 0 {
        return Err("tubelet has no boxes".into());
    }
    if r.det_scores.len() != n || r.track_scores.len() != n {
        return Err(format!(
            "array lengths differ: {n} boxes, {} det_scores, {} track_scores",
            r.det_scores.len(),
            r.track_scores.len()
        ));
    }
    if r.tcn_scores.as_ref().is_some_and(|t| t.len() != n) {
        return Err(format!("tcn_scores length differs from {n} boxes"));
    }
    schema.check_frame(&r.video, r.start_frame + n - 1)?;
    if r.anchor_frame < r.start_frame || r.anchor_frame >= r.start_frame + n {
        return Err(format!("anchor_frame {} outside the tubelet span", r.anchor_frame));
    }
    if r.det_scores.iter().any(|s| s.is_nan()) {
        return Err("NaN det_score".into());
    }
    if r.track_scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err("track_score outside [0, 1]".into());
    }
    if r.tcn_scores.iter().flatten().any(|s| !(0.0..=1.0).contains(s)) {
        return Err("tcn_score outside [0, 1]".into());
    }
    let boxes = (0..n)
        .map(|i| TubeletBox {
            frame: r.start_frame + i,
            bbox: r.boxes[i],
            det_score: r.det_scores[i],
            track_score: r.track_scores[i],
            anchor_offset_norm: 0.0,
            tcn_score: r.tcn_scores.as_ref().map(|t| t[i]),
        })
        .collect();
    let mut t = Tubelet { video_id: r.video, class_id, anchor_frame: r.anchor_frame, boxes };
    anchor_offsets(&mut t);
    Ok(t)
}

/// Reads tubelets; `anchor_offset_norm` is recomputed from the anchor frame.
pub fn read_tubelets(path: &Path, schema: &Schema) -> Result<Vec<Tubelet>> {
    let mut out = Vec::new();
    read_records(path, |_, r: TubeletRecord| {
        out.push(tubelet_from_record(r, schema)?);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_tubelets(path: &Path, tubelets: &[Tubelet], schema: &Schema) -> Result<()> {
    let records = tubelets
        .iter()
        .map(|t| {
            t.validate()?;
            Ok(TubeletRecord {
                video: t.video_id.clone(),
                class: schema.check_class_id(t.class_id)?.to_owned(),
                anchor_frame: t.anchor_frame,
                start_frame: t.start_frame(),
                boxes: t.boxes.iter().map(|b| b.bbox).collect(),
                det_scores: t.det_scores(),
                track_scores: t.boxes.iter().map(|b| b.track_score).collect(),
                tcn_scores: t.tcn_scores(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_records(path, records)
}

/// Reads a manifest and checks that every file it references exists.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let mut dataset: Option<DatasetRecord> = None;
    let mut videos = Vec::new();
    read_records(path, |_, r: ManifestRecord| {
        match r {
            ManifestRecord::Dataset(d) => {
                if dataset.replace(d).is_some() {
                    return Err("more than one dataset record".into());
                }
            }
            ManifestRecord::Video(v) => videos.push(v),
        }
        Ok(())
    })?;
    let dataset = dataset.ok_or_else(|| Error::Schema {
        path: path.to_path_buf(),
        line: 0,
        message: "no dataset record".into(),
    })?;
    let manifest = DatasetManifest {
        classes: dataset.classes,
        videos,
        ground_truth: dataset.ground_truth,
        proposals: dataset.proposals,
        detections: dataset.detections,
        simulation: dataset.simulation,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    manifest.schema()?;
    for (what, p) in [
        ("ground truth", &manifest.ground_truth),
        ("proposals", &manifest.proposals),
        ("detections", &manifest.detections),
    ] {
        if let Some(p) = p {
            let full = manifest.resolve(p);
            if !full.is_file() {
                return Err(Error::Resolution { what: what.into(), path: full });
            }
        }
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let dataset = ManifestRecord::Dataset(DatasetRecord {
        classes: manifest.classes.clone(),
        ground_truth: manifest.ground_truth.clone(),
        proposals: manifest.proposals.clone(),
        detections: manifest.detections.clone(),
        simulation: manifest.simulation.clone(),
    });
    let videos = manifest.videos.iter().cloned().map(ManifestRecord::Video);
    write_records(path, std::iter::once(dataset).chain(videos))
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportRecord<'a> {
    Summary {
        label: &'a str,
        interpolation: &'a str,
        iou_threshold: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        mean_ap: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        mean_corloc: Option<f64>,
    },
    Class {
        label: &'a str,
        class: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        ap: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        corloc: Option<f64>,
        tp: usize,
        fp: usize,
        gt: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        temporal_variation: Option<f64>,
    },
}

/// Writes one summary record and one record per class for each report.
pub fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut records = Vec::new();
    for r in reports {
        records.push(ReportRecord::Summary {
            label: &r.label,
            interpolation: crate::eval::INTERPOLATION,
            iou_threshold: r.iou_threshold,
            mean_ap: r.mean_ap,
            mean_corloc: r.mean_corloc,
        });
        for c in &r.classes {
            records.push(ReportRecord::Class {
                label: &r.label,
                class: &c.name,
                ap: c.ap,
                corloc: c.corloc,
                tp: c.tp,
                fp: c.fp,
                gt: c.gt,
                temporal_variation: c.temporal_variation,
            });
        }
    }
    write_records(path, records)
}
