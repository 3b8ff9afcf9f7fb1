mod common;

use std::fs;

use common::*;
use rand::Rng;
use tubelet_core::dataio::*;
use tubelet_core::proposal::anchor_offsets;
use tubelet_core::{Error, Tubelet, TubeletBox};

fn schema() -> Schema {
    let videos =
        (0..4).map(|i| VideoMeta { video_id: format!("v{i}"), frame_count: 50, width: 100.0, height: 100.0 }).collect();
    Schema::new(vec!["cat".into(), "dog".into(), "car".into()], videos).unwrap()
}

#[test]
fn thousand_random_detections_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let mut r = rng(4);
    let mut dets: Vec<_> = (0..1000)
        .map(|_| {
            // full-precision scores, including awkward ones
            let score = match r.random_range(0..10) {
                0 => f64::NEG_INFINITY,
                1 => 0.1 + 0.2,
                2 => -0.0,
                _ => r.random::<f64>() * 1e3 - 500.0,
            };
            det(
                &format!("v{}", r.random_range(0..4)),
                r.random_range(0..50),
                r.random_range(0..3),
                score,
                random_box(&mut r),
            )
        })
        .collect();
    dets[0].score = f64::INFINITY;
    write_detections(&path, &dets, &schema()).unwrap();
    let back = read_detections(&path, &schema()).unwrap();
    assert_eq!(back.len(), dets.len());
    for (a, b) in dets.iter().zip(&back) {
        assert_eq!(a.score.to_bits(), b.score.to_bits());
        assert_eq!(a, b);
    }
    // writing again is byte-identical
    let again = dir.path().join("e.jsonl");
    write_detections(&again, &back, &schema()).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn empty_file_reads_as_empty() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    fs::write(&path, "").unwrap();
    assert!(read_detections(&path, &schema()).unwrap().is_empty());
}

fn sample_tubelet(with_tcn: bool) -> Tubelet {
    let mut t = Tubelet {
        video_id: "v2".into(),
        class_id: 1,
        anchor_frame: 11,
        boxes: (10..13)
            .map(|f| TubeletBox {
                frame: f,
                bbox: bb(1.0 + f as f64, 2.0, 30.5, 40.25),
                det_score: 0.123456789 * f as f64,
                track_score: 1.0 / f as f64,
                anchor_offset_norm: 0.0,
                tcn_score: with_tcn.then(|| 1.0 / 3.0),
            })
            .collect(),
    };
    anchor_offsets(&mut t);
    t
}

#[test]
fn tubelets_round_trip_with_all_scores() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let tubes = vec![sample_tubelet(false), sample_tubelet(true)];
    write_tubelets(&path, &tubes, &schema()).unwrap();
    assert_eq!(read_tubelets(&path, &schema()).unwrap(), tubes);
}

#[test]
fn ground_truth_and_proposals_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(5);
    let gts: Vec<_> = (0..200).map(|i| gt("v1", i % 50, i % 3, i % 7, random_box(&mut r))).collect();
    let p = dir.path().join("g.jsonl");
    write_ground_truth(&p, &gts, &schema()).unwrap();
    assert_eq!(read_ground_truth(&p, &schema()).unwrap(), gts);

    let props: Vec<_> =
        (0..200).map(|i| Proposal { video_id: "v3".into(), frame: i % 50, bbox: random_box(&mut r) }).collect();
    let p = dir.path().join("p.jsonl");
    write_proposals(&p, &props).unwrap();
    assert_eq!(read_proposals(&p, &schema()).unwrap(), props);
}

#[test]
fn trajectories_group_by_instance() {
    let a = bb(0.0, 0.0, 10.0, 10.0);
    let b = bb(50.0, 50.0, 70.0, 70.0);
    let gts = vec![gt("v0", 1, 0, 0, a), gt("v0", 0, 0, 1, b), gt("v0", 0, 0, 0, a), gt("v0", 1, 0, 1, b)];
    let tr = trajectories(&gts);
    assert_eq!(tr.len(), 2);
    let first = &tr[&("v0".to_string(), 0)];
    assert_eq!(first.iter().map(|g| g.frame).collect::<Vec<_>>(), vec![0, 1]);
    assert!(first.iter().all(|g| g.bbox == a));
}

#[test]
fn malformed_records_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let good = r#"{"video":"v0","frame":1,"class":"cat","score":0.5,"box":[0,0,1,1]}"#;
    let cases = [
        (r#"{"video":"v0","frame":1,"class":"cat","score":0.5}"#, true),
        (r#"{"video":"v0","frame":1,"class":"horse","score":0.5,"box":[0,0,1,1]}"#, false),
        (r#"{"video":"v0","frame":50,"class":"cat","score":0.5,"box":[0,0,1,1]}"#, false),
        (r#"{"video":"v9","frame":1,"class":"cat","score":0.5,"box":[0,0,1,1]}"#, false),
        (r#"{"video":"v0","frame":1,"class":"cat","score":0.5,"box":[5,0,1,1]}"#, false),
        ("not json", true),
    ];
    for (bad, _) in cases {
        fs::write(&path, format!("{good}\n{good}\n{bad}\n")).unwrap();
        match read_detections(&path, &schema()) {
            Err(Error::Parse { line, .. }) | Err(Error::Schema { line, .. }) => assert_eq!(line, 3, "{bad}"),
            other => panic!("{bad}: {other:?}"),
        }
    }
}

#[test]
fn manifest_round_trip_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("gt.jsonl"), "").unwrap();
    let s = schema();
    let m = DatasetManifest {
        classes: s.classes().to_vec(),
        videos: s.videos().cloned().collect(),
        ground_truth: Some("gt.jsonl".into()),
        proposals: None,
        detections: None,
        simulation: None,
        base_dir: dir.path().to_path_buf(),
    };
    let path = dir.path().join("manifest.jsonl");
    write_manifest(&path, &m).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), m);

    let broken = DatasetManifest { proposals: Some("missing.jsonl".into()), ..m };
    write_manifest(&path, &broken).unwrap();
    assert!(matches!(read_manifest(&path), Err(Error::Resolution { .. })));
}

#[test]
fn schema_rejects_duplicates() {
    let v = VideoMeta { video_id: "a".into(), frame_count: 1, width: 1.0, height: 1.0 };
    assert!(Schema::new(vec!["x".into(), "x".into()], vec![v.clone()]).is_err());
    assert!(Schema::new(vec!["x".into()], vec![v.clone(), v.clone()]).is_err());
    assert!(Schema::new(vec!["x".into()], vec![VideoMeta { frame_count: 0, ..v }]).is_err());
}
