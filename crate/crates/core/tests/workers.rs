//! Kept in its own binary: it mutates the process environment.

use std::collections::BTreeMap;
use std::path::Path;

use tubelet_core::config::PipelineConfig;
use tubelet_core::pipeline::{run_pipeline, Stage, WORKERS_ENV};

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn worker_count_does_not_change_outputs() {
    let mut cfg = PipelineConfig::default();
    cfg.sim.videos = 4;
    cfg.sim.frames = 30;
    cfg.train.iterations = 20;
    cfg.train.hidden_channels = 8;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    // SAFETY: this is the only test in the binary.
    unsafe { std::env::set_var(WORKERS_ENV, "1") };
    run_pipeline(&cfg, a.path(), Stage::Simulate).unwrap();
    unsafe { std::env::set_var(WORKERS_ENV, "3") };
    run_pipeline(&cfg, b.path(), Stage::Simulate).unwrap();
    unsafe { std::env::remove_var(WORKERS_ENV) };
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}
