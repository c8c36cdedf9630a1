use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn ddp(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddp"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("spawn ddp")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn synth_spec(n: usize) -> Value {
    json!({
        "n_instances": n,
        "n_classes": 4,
        "duration_range_s": [0.1, 0.3],
        "strata": [{"fraction": 0.5, "noise_sigma": 0.1}, {"fraction": 0.5, "noise_sigma": 1.0}],
        "seed": 3
    })
}

fn config(policy: &str, k: f64) -> Value {
    json!({
        "train": {"synthetic": synth_spec(30)},
        "selection": {"policy": policy, "kept_ratio": k},
        "epochs": 3,
        "step_size": 0.5,
        "clip_cap_s": 1.0,
        "batch_budget_s": 2.0,
        "eval_sample_rates": [11025],
        "seed": 5
    })
}

fn write_json(dir: &Path, name: &str, v: &Value) {
    fs::write(dir.join(name), serde_json::to_string_pretty(v).unwrap()).unwrap();
}

#[test]
fn synth_writes_wavs_and_manifest_deterministically() {
    let tmp = TempDir::new().unwrap();
    write_json(tmp.path(), "spec.json", &synth_spec(10));
    ok(&ddp(tmp.path(), &["synth", "spec.json", "--out", "a"]));
    ok(&ddp(tmp.path(), &["synth", "spec.json", "--out", "b"]));
    let wavs = fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav"))
        .count();
    assert_eq!(wavs, 10);
    let manifest = fs::read(tmp.path().join("a/manifest.jsonl")).unwrap();
    assert_eq!(String::from_utf8_lossy(&manifest).lines().count(), 10);
    assert_eq!(manifest, fs::read(tmp.path().join("b/manifest.jsonl")).unwrap());
    assert_eq!(
        fs::read(tmp.path().join("a/syn-00004.wav")).unwrap(),
        fs::read(tmp.path().join("b/syn-00004.wav")).unwrap()
    );
}

#[test]
fn synth_validates_before_writing() {
    let tmp = TempDir::new().unwrap();
    let mut spec = synth_spec(4);
    spec["strata"][0]["fraction"] = json!(0.7);
    write_json(tmp.path(), "spec.json", &spec);
    let out = ddp(tmp.path(), &["synth", "spec.json", "--out", "never"]);
    assert!(!out.status.success());
    assert!(!tmp.path().join("never").exists());
}

#[test]
fn synthesized_manifest_trains_from_another_directory() {
    let tmp = TempDir::new().unwrap();
    fs::create_dir(tmp.path().join("exp")).unwrap();
    write_json(tmp.path(), "spec.json", &synth_spec(12));
    ok(&ddp(tmp.path(), &["synth", "spec.json", "--out", "exp/data"]));
    let mut cfg = config("hard", 0.5);
    cfg["train"] = json!({"manifest": "data/manifest.jsonl"});
    cfg["test"] = json!({"manifest": "data/manifest.jsonl"});
    write_json(&tmp.path().join("exp"), "cfg.json", &cfg);
    ok(&ddp(tmp.path(), &["run", "exp/cfg.json", "--out", "runs/m"]));
    assert!(tmp.path().join("runs/m/summary.json").exists());
}

#[test]
fn full_data_run_has_unit_speedup() {
    let tmp = TempDir::new().unwrap();
    write_json(tmp.path(), "cfg.json", &config("random", 1.0));
    ok(&ddp(tmp.path(), &["run", "cfg.json", "--out", "r"]));
    let s: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("r/summary.json")).unwrap()).unwrap();
    assert!((s["speedup"].as_f64().unwrap() - 1.0).abs() <= 0.05);
    assert_eq!(s["processed_ratio"].as_f64().unwrap(), 1.0);
}

#[test]
fn invalid_policy_lists_valid_ones() {
    let tmp = TempDir::new().unwrap();
    write_json(tmp.path(), "cfg.json", &config("medium", 0.5));
    for args in [&["run", "cfg.json"][..], &["run", "cfg.json", "--policy", "medium"][..]] {
        let out = ddp(tmp.path(), args);
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("static, random, easy, hard, easy2hard"), "{err}");
    }
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    write_json(tmp.path(), "cfg.json", &config("easy2hard", 0.3));
    let out = ddp(tmp.path(), &["run", "cfg.json", "--out", "r", "--dry-run"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("epoch 0 keeps 9 of 30"), "{text}");
    assert!(text.contains("\"epsilon\""));
    assert!(!tmp.path().join("r").exists());
}

fn strip_wall_clock(text: &str) -> Vec<Value> {
    text.lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_clock_s");
            v
        })
        .collect()
}

#[test]
fn repeated_runs_match_apart_from_wall_clock() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = config("easy2hard", 0.5);
    cfg["drop"] = json!({"mode": "chunk", "time_kept_ratio": 0.6, "chunk_len": 80});
    cfg["mask"] = json!({});
    write_json(tmp.path(), "cfg.json", &cfg);
    ok(&ddp(tmp.path(), &["run", "cfg.json", "--out", "a", "--trace"]));
    ok(&ddp(tmp.path(), &["run", "cfg.json", "--out", "b", "--trace"]));
    let read = |p: &str| fs::read_to_string(tmp.path().join(p)).unwrap();
    assert_eq!(strip_wall_clock(&read("a/epochs.jsonl")), strip_wall_clock(&read("b/epochs.jsonl")));
    assert_eq!(read("a/scores.csv"), read("b/scores.csv"));
    assert_eq!(read("a/selection.csv"), read("b/selection.csv"));
    assert_eq!(read("a/scores.csv").lines().count(), 1 + 3 * 30);
}

#[test]
fn time_flags_override_config() {
    let tmp = TempDir::new().unwrap();
    write_json(tmp.path(), "cfg.json", &config("random", 1.0));
    let out = ddp(
        tmp.path(),
        &["run", "cfg.json", "--dry-run", "--time-kept", "0.5", "--mode", "point", "--mask-max-s", "0.2"],
    );
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"point\"") && text.contains("0.2"), "{text}");
}

fn sweep(policies: &[&str], seeds: Vec<u64>) -> Value {
    json!({
        "base": config("random", 1.0),
        "policies": policies,
        "instance_kept": [0.4],
        "seeds": seeds
    })
}

#[test]
fn sweep_rows_follow_policy_order() {
    let tmp = TempDir::new().unwrap();
    let policies = ["hard", "static", "easy2hard", "random", "easy"];
    write_json(tmp.path(), "sweep.json", &sweep(&policies, vec![1]));
    ok(&ddp(tmp.path(), &["sweep", "sweep.json", "--out", "s", "--parallel", "2"]));
    let csv = fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("policy,instance_kept,time_kept,seed,final_error,error_11025hz,processed_ratio"));
    let got: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(got, policies);

    let report = ddp(tmp.path(), &["report", "s/sweep.csv"]);
    ok(&report);
    assert_eq!(String::from_utf8_lossy(&report.stdout).lines().count(), 6);
}

#[test]
fn single_cell_sweep() {
    let tmp = TempDir::new().unwrap();
    write_json(tmp.path(), "sweep.json", &sweep(&["easy"], vec![1]));
    ok(&ddp(tmp.path(), &["sweep", "sweep.json", "--out", "s"]));
    assert_eq!(fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap().lines().count(), 2);
}

#[test]
fn oversized_sweep_is_refused_with_count() {
    let tmp = TempDir::new().unwrap();
    write_json(tmp.path(), "sweep.json", &sweep(&["easy", "hard"], (0..200).collect()));
    let out = ddp(tmp.path(), &["sweep", "sweep.json", "--out", "s"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("400"));
    assert!(!tmp.path().join("s").exists());
}

#[test]
fn report_renders_run_directory() {
    let tmp = TempDir::new().unwrap();
    write_json(tmp.path(), "cfg.json", &config("easy", 0.5));
    ok(&ddp(tmp.path(), &["run", "cfg.json", "--out", "r"]));
    let out = ddp(tmp.path(), &["report", "r"]);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("11025 Hz") && text.lines().count() > 4, "{text}");
}

#[test]
fn missing_config_fails() {
    let tmp = TempDir::new().unwrap();
    let out = ddp(tmp.path(), &["run", "nope.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}
