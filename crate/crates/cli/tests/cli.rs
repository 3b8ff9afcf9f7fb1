use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tubelet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tubelet")).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "[sim]\nvideos = 3\nframes = 30\n\n[train]\niterations = 10\nhidden_channels = 8\nwindow = 20\nwindow_stride = 10\n";

#[test]
fn eval_map_matches_golden() {
    let (manifest, dets) = (fixture("manifest.jsonl"), fixture("detections.jsonl"));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("map.jsonl");
    let table = ok(tubelet(&[
        "eval",
        "map",
        "--manifest",
        s(&manifest),
        "--detections",
        s(&dets),
        "--label",
        "tiny",
        "--out",
        s(&out),
    ]));
    assert_eq!(table, std::fs::read_to_string(fixture("map.golden.txt")).unwrap());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(fixture("map.golden.jsonl")).unwrap());
}

#[test]
fn eval_corloc_matches_golden() {
    let table = ok(tubelet(&[
        "eval",
        "corloc",
        "--manifest",
        s(&fixture("manifest.jsonl")),
        "--detections",
        s(&fixture("detections.jsonl")),
        "--label",
        "tiny",
    ]));
    assert_eq!(table, std::fs::read_to_string(fixture("corloc.golden.txt")).unwrap());
}

#[test]
fn stage_commands_chain_like_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let c = s(&cfg);
    let world = d.join("world");
    let manifest = world.join("manifest.jsonl");
    let stage = d.join("stage");
    ok(tubelet(&["--config", c, "simulate", "--out", s(&world)]));
    ok(tubelet(&["--config", c, "filter", "--manifest", s(&manifest), "--out", s(&stage)]));
    let dets = stage.join("detections.jsonl");
    let tubes = d.join("tubelets.jsonl");
    ok(tubelet(&["--config", c, "propose", "--manifest", s(&manifest), "--detections", s(&dets), "--out", s(&tubes)]));
    let pooled = d.join("pooled.jsonl");
    ok(tubelet(&[
        "--config",
        c,
        "perturb-pool",
        "--manifest",
        s(&manifest),
        "--tubelets",
        s(&tubes),
        "--detections",
        s(&dets),
        "--out",
        s(&pooled),
    ]));
    let models = d.join("models");
    ok(tubelet(&[
        "--config",
        c,
        "tcn",
        "train",
        "--manifest",
        s(&manifest),
        "--tubelets",
        s(&pooled),
        "--out",
        s(&models),
    ]));
    let rescored = d.join("rescored.jsonl");
    ok(tubelet(&[
        "--config",
        c,
        "tcn",
        "rescore",
        "--manifest",
        s(&manifest),
        "--tubelets",
        s(&pooled),
        "--models",
        s(&models),
        "--out",
        s(&rescored),
    ]));
    let table = ok(tubelet(&[
        "eval",
        "map",
        "--manifest",
        s(&manifest),
        "--tubelets",
        s(&rescored),
        "--score",
        "tcn",
        "--label",
        "chain",
    ]));
    assert!(table.contains("# chain"));

    // the end-to-end run writes the same stage outputs
    let run = d.join("run");
    ok(tubelet(&["--config", c, "pipeline", "run", "--out", s(&run)]));
    for (mine, theirs) in [(&dets, "detections.jsonl"), (&tubes, "tubelets.jsonl"), (&pooled, "pooled.jsonl")] {
        assert_eq!(std::fs::read(mine).unwrap(), std::fs::read(run.join(theirs)).unwrap(), "{theirs}");
    }
    let written = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(written.contains("videos = 3"));
}

#[test]
fn baseline_ablation_prints_one_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("run");
    let table = ok(tubelet(&["--config", s(&cfg), "pipeline", "run", "--ablation", "baseline", "--out", s(&out)]));
    assert_eq!(table.matches("\n# ").count() + usize::from(table.starts_with("# ")), 1);
    assert!(table.starts_with("# baseline"));
}

#[test]
fn schema_and_config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let bad = d.join("bad.jsonl");
    std::fs::write(&bad, "{\"video\":\"a\",\"frame\":0,\"class\":\"horse\",\"score\":1.0,\"box\":[0,0,1,1]}\n")
        .unwrap();
    let out = tubelet(&["eval", "map", "--manifest", s(&fixture("manifest.jsonl")), "--detections", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.jsonl:1:"));

    let cfg = d.join("typo.toml");
    std::fs::write(&cfg, "[sim]\nvidoes = 3\n").unwrap();
    assert_eq!(tubelet(&["--config", s(&cfg), "simulate", "--out", s(d)]).status.code(), Some(2));

    let out = tubelet(&["pipeline", "run", "--from", "tcn-train", "--out", s(&d.join("empty"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("simulate"));
}

#[test]
fn unreadable_inputs_exit_with_1() {
    let missing = Path::new("/nonexistent/manifest.jsonl");
    let out = tubelet(&["eval", "map", "--manifest", s(missing), "--detections", s(missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot access /nonexistent/manifest.jsonl"));
}

#[test]
fn diverging_training_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("hot.toml");
    std::fs::write(&cfg, format!("{SMALL}learning_rate = 1e308\nmomentum = 0.0\n")).unwrap();
    let c = s(&cfg);
    let run = d.join("run");
    let out = tubelet(&["--config", c, "pipeline", "run", "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // training reads the pooled tubelets the failed run left behind
    let out = tubelet(&[
        "--config",
        c,
        "tcn",
        "train",
        "--manifest",
        s(&run.join("world/manifest.jsonl")),
        "--tubelets",
        s(&run.join("pooled.jsonl")),
        "--out",
        s(&d.join("models")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
