mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn invlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invlab"))
        .args(args)
        .env("INVLAB_THREADS", "2")
        .output()
        .expect("spawn invlab")
}

fn write_config(dir: &Path, value: Value) -> String {
    let path = dir.join("config.in.json");
    fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({ "scael": 0.4 }));
    let out = invlab(&["table1", "--config", &cfg, "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scael"));
}

#[test]
fn mismatched_kind_in_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({ "kind": "fig3" }));
    let out = invlab(&["table1", "--config", &cfg, "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_scale_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({ "scale": -1.0 }));
    let out = invlab(&["baseline-random", "--config", &cfg, "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_without_inline_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({ "train_inline": false }));
    let missing = dir.path().join("nope.ckpt");
    let out = invlab(&["table1", "--config", &cfg, "--checkpoint", s(&missing), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let cfg = write_config(dir.path(), json!({ "train_inline": false }));
    let out = invlab(&["table1", "--config", &cfg, "--checkpoint", s(&bad), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn flow_checkpoint_in_diffusion_experiment_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({ "train_inline": false, "held_out": 8 }));
    let flow = &common::flow().path;
    let out = invlab(&["table1", "--config", &cfg, "--checkpoint", s(flow), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_then_reconstruct_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("tiny.ckpt");
    let train_cfg = write_config(
        dir.path(),
        json!({ "train": { "objective": "epsilon_prediction", "steps": 30, "batch_size": 32, "train_size": 256 } }),
    );
    let train_dir = dir.path().join("train");
    let out = invlab(&["train", "--config", &train_cfg, "--checkpoint", s(&ckpt), "--out", s(&train_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), train_dir.display().to_string());
    let losses = fs::read_to_string(train_dir.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 31);

    let cfg = write_config(
        dir.path(),
        json!({ "train_inline": false, "held_out": 16, "trajectory_points": 4, "condition": "tight", "scale": 0.5 }),
    );
    let run_dir = dir.path().join("recon");
    let out = invlab(&["reconstruct", "--config", &cfg, "--checkpoint", s(&ckpt), "--seed", "7", "--out", s(&run_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let config: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["seed"], 7);
    assert_eq!(config["kind"], "reconstruct");
    let prov: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("provenance.json")).unwrap()).unwrap();
    let sha = prov["checkpoints"][0]["sha256"].as_str().unwrap();
    assert_eq!(sha.len(), 64);
    assert_eq!(sha, invlab::experiments::sha256_file(&ckpt).unwrap());
    let reports: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("reports.json")).unwrap()).unwrap();
    assert_eq!(reports[0]["aggregates"]["count"], 16);
    assert_eq!(reports[0]["label"]["condition"], "tight");

    let report_cfg = write_config(dir.path(), json!({ "reports": [run_dir] }));
    let summary_dir = dir.path().join("summary");
    let out = invlab(&["report", "--config", &report_cfg, "--out", s(&summary_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(summary_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
}
