use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use p2p_core::ingest::{read_track, save_track};
use p2p_core::synth::{generate_track, SynthSpec};
use p2p_core::track::BehaviorClass;

fn p2p(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_p2p"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &["--set", "model.d_model=16", "--set", "model.layers=1", "--set", "train.epochs=3", "--set", "train.batch_size=32"];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn synth_writes_tracks_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = p2p(&["synth", "--out", "a", "--set", "synth.n_tracks=10"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let files: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().collect();
    assert_eq!(files.len(), 11);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_tracks"], 10);
    assert_eq!(manifest["n_drones"], 5);
    assert_eq!(manifest["per_class"]["distractor"], 5);
    assert_eq!(manifest["seed"], 42);

    p2p(&["synth", "--out", "b", "--set", "synth.n_tracks=10"], dir.path());
    assert_eq!(
        fs::read(dir.path().join("a/manifest.json")).unwrap(),
        fs::read(dir.path().join("b/manifest.json")).unwrap()
    );
    let reseeded = p2p(&["synth", "--out", "c", "--seed", "5", "--set", "synth.n_tracks=10"], dir.path());
    assert!(reseeded.status.success());
    assert_ne!(
        fs::read(dir.path().join("a/synth_00000.jsonl")).unwrap(),
        fs::read(dir.path().join("c/synth_00000.jsonl")).unwrap()
    );
}

#[test]
fn synth_into_unwritable_location_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("blocker"), "x").unwrap();
    let out = p2p(&["synth", "--out", "blocker/sub", "--set", "synth.n_tracks=2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("error"));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    assert!(p2p(&["synth", "--out", "data", "--set", "synth.n_tracks=20"], cwd).status.success());

    let out = p2p(&with_small(&["train", "data", "--out", "m.p2pm"]), cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    let metrics = fs::read_to_string(cwd.join("m.metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.starts_with("epoch,train_loss,val_loss,val_ade,val_isr,val_acc"));
    assert!(&fs::read(cwd.join("m.p2pm")).unwrap()[..4] == b"P2PM");

    let out = p2p(&["eval", "data", "--predictors", "frame,track,naive", "--format", "csv", "--out", "rep"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(cwd.join("rep/report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("frame,"));
    assert_eq!(rows[1].split(',').nth(3), Some("1.000"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cwd.join("rep/report.json")).unwrap()).unwrap();
    assert_eq!(summary["fingerprint"]["interceptor"]["v_max"], 15.0);
    assert_eq!(summary["fingerprint"]["scale"]["meters_per_pixel"], 0.05);
    assert_eq!(summary["fingerprint"]["seeds"]["train"], 0);
    assert_eq!(summary["fingerprint"]["config_hash"].as_str().unwrap().len(), 64);

    let out = p2p(&["eval", "data", "--predictors", "naive,p2p", "--checkpoint", "m.p2pm", "--split", "val"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("| p2p |"));

    let out = p2p(&["predict", "data/synth_00001.jsonl", "--checkpoint", "m.p2pm"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    let pred: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(pred["positions"].as_array().unwrap().len(), 20);
    let total: f64 = pred["behavior_probs"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() <= 1e-3);
    let p = pred["drone_prob"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn eval_argument_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    assert!(p2p(&["synth", "--out", "data", "--set", "synth.n_tracks=4"], cwd).status.success());
    let out = p2p(&["eval", "data", "--predictors", "p2p"], cwd);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("checkpoint"));
    let out = p2p(&["eval", "data", "--predictors", "frame,kalman"], cwd);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("kalman"));
    let out = p2p(&["eval", "data", "--format", "xml"], cwd);
    assert_eq!(out.status.code(), Some(1));
    let out = p2p(&["eval", "data", "--predictors", "p2p", "--checkpoint", "missing.p2pm"], cwd);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_and_short_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let out = p2p(&["train", "no_such_dir"], cwd);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no_such_dir"));

    fs::create_dir(cwd.join("empty")).unwrap();
    assert_eq!(p2p(&["train", "empty"], cwd).status.code(), Some(2));

    let spec = SynthSpec {
        track_len: 10,
        ..Default::default()
    };
    let short = generate_track(BehaviorClass::Hover, &spec, 1).unwrap();
    save_track(&cwd.join("short/s.jsonl"), &short).unwrap();
    let out = p2p(&["train", "short"], cwd);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("too short"));

    assert!(p2p(&["synth", "--out", "data", "--set", "synth.n_tracks=5"], cwd).status.success());
    assert!(p2p(&with_small(&["train", "data", "--out", "m.p2pm", "--set", "train.epochs=1"]), cwd).status.success());
    let out = p2p(&["predict", "short/s.jsonl", "--checkpoint", "m.p2pm"], cwd);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("too short"));
    assert_eq!(p2p(&["predict", "short/s.jsonl"], cwd).status.code(), Some(1));
}

#[test]
fn config_file_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::write(cwd.join("ok.toml"), "[synth]\nn_tracks = 3\n").unwrap();
    let out = p2p(&["--config", "ok.toml", "synth", "--out", "d"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_dir(cwd.join("d")).unwrap().count(), 4);
    // flags win over the file
    assert!(p2p(&["--config", "ok.toml", "synth", "--out", "e", "--set", "synth.n_tracks=1"], cwd).status.success());
    assert_eq!(fs::read_dir(cwd.join("e")).unwrap().count(), 2);

    fs::write(cwd.join("bad.toml"), "[synth]\nn_trakcs = 3\n").unwrap();
    let out = p2p(&["--config", "bad.toml", "synth"], cwd);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("n_trakcs"));
    assert_eq!(p2p(&["frobnicate"], cwd).status.code(), Some(1));
    assert_eq!(p2p(&[], cwd).status.code(), Some(1));
    assert_eq!(p2p(&["--help"], cwd).status.code(), Some(0));
}

#[test]
fn ingest_external_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    fs::create_dir(cwd.join("raw")).unwrap();
    let rects: Vec<String> = (0..40).map(|i| format!("[{}, 100, 10, 8]", 50 + 3 * i)).collect();
    let exist: Vec<&str> = (0..40).map(|i| if i == 20 { "0" } else { "1" }).collect();
    fs::write(
        cwd.join("raw/seq_a.json"),
        format!("{{\"exist\": [{}], \"gt_rect\": [{}]}}", exist.join(","), rects.join(",")),
    )
    .unwrap();
    let out = p2p(&["ingest", "raw", "--out", "clean"], cwd);
    assert!(out.status.success(), "{}", stderr(&out));
    let track = read_track(&cwd.join("clean/seq_a.jsonl"), 0).unwrap();
    assert_eq!(track.len(), 40);
    assert_eq!(track.points[20].bbox.x, 50.0 + 60.0 + 5.0);
    let labels = track.labels.unwrap();
    assert_eq!(labels.behavior, BehaviorClass::PassBy);
    assert!(labels.is_drone);

    fs::write(cwd.join("raw/broken.json"), "{\"boxes\": []}").unwrap();
    let out = p2p(&["ingest", "raw", "--out", "clean2"], cwd);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("gt_rect"));
}
