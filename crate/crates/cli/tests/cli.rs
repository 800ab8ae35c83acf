use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = "\
clip_seconds = 6
train_minutes = 0.5
dev_minutes = 0.2
test_minutes = 0.2
k = 8
dict_iters = 10
channels = 8
blocks = 1
epochs = 2
batch = 4
probe_clips = 4
probe_epochs = 5
probe_seconds = 1
";

fn nmfseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmfseg"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn nmfseg")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = nmfseg(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), TINY).unwrap();
    dir
}

fn trained() -> tempfile::TempDir {
    let dir = workspace();
    for cmd in ["gen-data", "pretrain-dict", "train"] {
        ok(dir.path(), &[cmd, "--config", "c.cfg"]);
    }
    dir
}

fn run_log(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run_log.json")).unwrap()).unwrap()
}

#[test]
fn gen_data_writes_manifest_audio_labels_and_run_log() {
    let dir = workspace();
    ok(dir.path(), &["gen-data", "--config", "c.cfg"]);
    let data = dir.path().join("data");
    let manifest = fs::read_to_string(data.join("manifest.csv")).unwrap();
    let rows: Vec<&str> = manifest.lines().skip(1).collect();
    assert_eq!(rows.len(), 5 + 2 + 2);
    for id in ["train_000", "dev_001", "test_001"] {
        assert!(data.join(format!("audio/{id}.wav")).is_file());
        assert!(data.join(format!("labels/{id}.lab")).is_file());
    }
    let log = run_log(&data);
    assert_eq!(log["command"], "gen-data");
    assert_eq!(log["metrics"]["train_clips"], 5);
    assert_eq!(log["config"]["k"], "8");
    assert_eq!(log["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn train_without_dictionary_names_the_missing_path() {
    let dir = workspace();
    ok(dir.path(), &["gen-data", "--config", "c.cfg"]);
    let out = nmfseg(dir.path(), &["train", "--config", "c.cfg", "--out", "m"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dict/dictionary.nsd"), "{err}");
    assert!(!dir.path().join("m").exists());
}

#[test]
fn failed_stage_removes_partial_outputs() {
    let dir = workspace();
    ok(dir.path(), &["gen-data", "--config", "c.cfg"]);
    fs::remove_file(dir.path().join("data/audio/train_002.wav")).unwrap();
    let out = nmfseg(dir.path(), &["pretrain-dict", "--config", "c.cfg", "--out", "d"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train_002.wav"));
    assert!(!dir.path().join("d").exists());
}

#[test]
fn unknown_flag_and_unknown_key_fail() {
    let dir = workspace();
    let out = nmfseg(dir.path(), &["eval", "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));

    fs::write(dir.path().join("bad.cfg"), "epochz = 3\n").unwrap();
    let out = nmfseg(dir.path(), &["gen-data", "--config", "bad.cfg"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn eval_is_byte_identical_and_reproducible_from_its_run_log() {
    let dir = trained();
    let p = dir.path();
    ok(p, &["eval", "--config", "c.cfg", "--out", "e1"]);
    ok(p, &["eval", "--config", "c.cfg", "--out", "e2"]);
    let csv = fs::read(p.join("e1/eval.csv")).unwrap();
    assert_eq!(csv, fs::read(p.join("e2/eval.csv")).unwrap());
    assert_eq!(fs::read(p.join("e1/run_log.json")).unwrap(), fs::read(p.join("e2/run_log.json")).unwrap());

    ok(p, &["eval", "--config", "e1/run_log.json", "--out", "e3"]);
    assert_eq!(csv, fs::read(p.join("e3/eval.csv")).unwrap());
    assert_eq!(run_log(&p.join("e1"))["metrics"], run_log(&p.join("e3"))["metrics"]);
    assert_eq!(run_log(&p.join("e1"))["config_hash"], run_log(&p.join("e3"))["config_hash"]);
}

#[test]
fn downstream_commands_write_their_reports() {
    let dir = trained();
    let p = dir.path();
    for cmd in ["segment", "explain", "probe"] {
        ok(p, &[cmd, "--config", "c.cfg", "--out", &format!("runs/{cmd}")]);
    }
    ok(p, &["report", "--out", "runs"]);

    let seg = fs::read_to_string(p.join("runs/segment/test.seg")).unwrap();
    assert!(seg.lines().all(|l| l.starts_with("SEG ") && l.split_whitespace().count() == 5), "{seg}");
    let components = fs::read_to_string(p.join("runs/explain/components.csv")).unwrap();
    assert_eq!(components.lines().count(), 1 + 8);
    assert!(p.join("runs/explain/spectra/component_000.csv").is_file());
    let probes = fs::read_to_string(p.join("runs/probe/probes.csv")).unwrap();
    assert_eq!(probes.lines().count(), 1 + 3);
    let report = fs::read_to_string(p.join("runs/report.md")).unwrap();
    for cmd in ["segment", "explain", "probe"] {
        assert!(report.contains(cmd), "{report}");
    }
}
