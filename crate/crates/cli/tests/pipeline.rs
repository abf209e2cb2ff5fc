use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn aoa(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_aoa"))
        .args(args)
        .current_dir(dir)
        .env("AOA_OUTPUT_DIR", dir.join("out"))
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let r = aoa(dir, args);
    assert_eq!(r.code, 0, "aoa {args:?} failed:\n{}\n{}", r.stdout, r.stderr);
    r.stdout
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn write_config(dir: &Path, extra: Value) {
    let mut config = serde_json::json!({
        "data": {"train": "train.jsonl", "valid": "valid.jsonl", "test": "test.jsonl", "format": "generic"},
        "model": {"embed_dim": 16, "hidden_dim": 16, "epochs": 8, "batch_size": 8},
        "lm": {"order": 4, "classes": 12},
        "ensemble_size": 2,
        "seed": 3
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut config, extra) {
        base.extend(more);
    }
    std::fs::write(dir.join("config.json"), config.to_string()).unwrap();
}

fn synth(dir: &Path, task: &str, split: &str, n: usize, seed: u64) {
    ok(dir, &["synth", "--task", task, "--samples", &n.to_string(), "--seed", &seed.to_string(), "--out", &format!("{split}.jsonl")]);
}

#[test]
fn generic_toy_file_prepares_three_samples() {
    let dir = tempfile::tempdir().unwrap();
    let lines = [
        r#"{"document": "the dog ran\nthe cat sat", "query": "the XXXXX sat", "answer": "cat", "candidates": ["cat", "dog"]}"#,
        r#"{"document": "a b c", "query": "XXXXX b", "answer": "a", "candidates": ["a", "c"]}"#,
        r#"{"document": "x y", "query": "y XXXXX", "answer": "x"}"#,
    ];
    std::fs::write(dir.path().join("train.jsonl"), lines.join("\n")).unwrap();
    write_config(dir.path(), serde_json::json!({"data": {"train": "train.jsonl", "format": "generic"}}));
    let out = ok(dir.path(), &["--config", "config.json", "prepare"]);
    assert!(out.contains("train"));
    let stats = read_json(dir.path().join("out/stats.json"));
    assert_eq!(stats["splits"][0]["stats"]["queries"], 3);
    let prepared = std::fs::read_to_string(dir.path().join("out/train.jsonl")).unwrap();
    assert_eq!(prepared.lines().count(), 3);
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // usage
    assert_eq!(aoa(d, &["frobnicate"]).code, 1);
    assert_eq!(aoa(d, &["--set", "model.embed_size=3", "prepare"]).code, 1);
    assert_eq!(aoa(d, &["--set", "model.dropout_rate=2", "prepare"]).code, 1);
    assert_eq!(aoa(d, &["--help"]).code, 0);
    // missing upstream artifact names the stage to run
    let r = aoa(d, &["train"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("aoa prepare"), "{}", r.stderr);
    let r = aoa(d, &["tune"]);
    assert!(r.code == 1 && r.stderr.contains("aoa prepare"), "{}", r.stderr);
    // data
    let r = aoa(d, &["--set", "data.train=missing.txt", "prepare"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("missing.txt"));
    std::fs::write(d.join("bad.txt"), "1 only one line\n").unwrap();
    assert_eq!(aoa(d, &["--set", "data.train=bad.txt", "prepare"]).code, 2);
}

#[test]
fn cluster_recovers_planted_partition() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let line = r#"{"document": "a x\nb y\na y\nb x", "query": "XXXXX x", "answer": "a"}"#;
    std::fs::write(d.join("train.jsonl"), line).unwrap();
    write_config(d, serde_json::json!({"data": {"train": "train.jsonl", "format": "generic"}, "lm": {"order": 2, "classes": 2}}));
    ok(d, &["--config", "config.json", "prepare"]);
    ok(d, &["--config", "config.json", "cluster"]);
    let classes = read_json(d.join("out/classes.json"));
    let c = &classes["map"]["classes"];
    assert_eq!(c["a"], c["b"]);
    assert_eq!(c["x"], c["y"]);
    assert_ne!(c["a"], c["x"]);
}

/// Queries are document sentences with the entity blanked, so the local
/// n-gram feature points at the answer.
#[test]
fn informative_features_make_reranking_help() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "sentence", "train", 300, 1);
    synth(d, "sentence", "valid", 100, 2);
    synth(d, "sentence", "test", 100, 3);
    write_config(d, serde_json::json!({}));
    let c = ["--config", "config.json"];
    let with = |args: &[&str]| ok(d, &[&c[..], args].concat());
    with(&["prepare"]);
    with(&["train"]);
    with(&["eval", "--split", "test"]);
    with(&["nbest", "--split", "valid"]);
    with(&["nbest", "--split", "test"]);
    with(&["train-lm", "--arpa"]);
    with(&["cluster"]);
    with(&["tune"]);
    let out = with(&["rerank"]);
    assert!(out.contains("eta"), "{out}");
    let eval = read_json(d.join("out/eval_test.json"));
    let tuned = read_json(d.join("out/rerank_test.json"));
    let reader_acc = eval["accuracy"].as_f64().unwrap();
    assert_eq!(tuned["reader_accuracy"].as_f64().unwrap(), reader_acc);
    assert!(tuned["accuracy"].as_f64().unwrap() >= reader_acc, "{tuned} vs {reader_acc}");

    with(&["rerank", "--weights", "1,0,0,0"]);
    let identity = read_json(d.join("out/rerank_test.json"));
    assert_eq!(identity["accuracy"].as_f64().unwrap(), reader_acc);

    let report = &eval;
    let binned: u64 = report["length_bins"].as_array().unwrap().iter().map(|b| b["samples"].as_u64().unwrap()).sum();
    assert_eq!(binned, report["evaluated"].as_u64().unwrap());
    assert!(std::fs::read_to_string(d.join("out/eval_test_rank.csv")).unwrap().starts_with("bin,samples,correct,accuracy"));
    assert!(std::fs::read_to_string(d.join("out/global.arpa")).unwrap().starts_with("\\data\\"));
}

#[test]
fn ensemble_trains_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "copy", "train", 40, 1);
    synth(d, "copy", "test", 20, 2);
    write_config(d, serde_json::json!({"data": {"train": "train.jsonl", "test": "test.jsonl", "format": "generic"}, "model": {"embed_dim": 8, "hidden_dim": 8, "epochs": 2}}));
    ok(d, &["--config", "config.json", "prepare"]);
    ok(d, &["--config", "config.json", "train", "--ensemble"]);
    assert!(d.join("out/model-0.ckpt").exists() && d.join("out/model-1.ckpt").exists());
    let out = ok(d, &["--config", "config.json", "eval", "--ensemble"]);
    assert!(out.contains("test accuracy"));
    assert_eq!(read_json(d.join("out/eval_test.json"))["models"], 2);
    let out = ok(d, &["--config", "config.json", "eval", "--checkpoint", "out/model-1.ckpt"]);
    assert!(out.contains("test accuracy"));
}
