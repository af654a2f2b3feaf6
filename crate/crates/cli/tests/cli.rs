//! End-to-end tests of the command-line surface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_protoguard")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("protoguard_cli_{}_{}", std::process::id(), tag));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
  "dataset": {"kind": "synthetic", "class_count": 3, "train_per_class": 40, "test_per_class": 10, "feature_dim": 6, "cluster_spread": 0.4},
  "client_count": 2,
  "batch_size": 60,
  "rounds": 2,
  "poison_start_round": 1,
  "model": {"bottom_hidden": [8], "top_hidden": [8], "embedding_dim": 3},
  "seed": 11
}"#,
    )
    .unwrap();
    path
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn run_writes_report_with_populated_metrics() {
    let dir = workdir("run");
    let config = tiny_config(&dir);
    let out = run(
        &[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            "report.json",
        ],
        &dir,
    );
    assert!(out.status.success(), "{:?}", out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("MA="), "summary line missing: {}", stdout);
    assert!(stdout.contains("ASR="));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert!(report["main_accuracy"].is_f64() || report["main_accuracy"].is_number());
    assert!(report["attack_success_rate"].is_number());
    assert_eq!(report["rounds"].as_array().unwrap().len(), 2);
    assert_eq!(report["config"]["seed"], 11);
}

#[test]
fn rerunning_the_echoed_config_is_bitwise_identical() {
    let dir = workdir("echo");
    let config = tiny_config(&dir);
    let out = run(
        &[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            "a.json",
        ],
        &dir,
    );
    assert!(out.status.success());
    // Extract the echoed config and run it as a standalone config file.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("a.json")).unwrap()).unwrap();
    std::fs::write(
        dir.join("echoed.json"),
        serde_json::to_string(&report["config"]).unwrap(),
    )
    .unwrap();
    let out = run(&["run", "--config", "echoed.json", "--out", "b.json"], &dir);
    assert!(out.status.success());
    let a = std::fs::read_to_string(dir.join("a.json")).unwrap();
    let b = std::fs::read_to_string(dir.join("b.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unknown_attack_tag_fails_with_config_exit_code_naming_the_tag() {
    let dir = workdir("badtag");
    std::fs::write(dir.join("bad.json"), r#"{"attack": {"kind": "teleport"}}"#).unwrap();
    let out = run(&["run", "--config", "bad.json"], &dir);
    assert_eq!(out.status.code(), Some(2), "{:?}", out);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("teleport"), "stderr: {}", stderr);
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = workdir("missing");
    let out = run(&["run", "--config", "nope.json"], &dir);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_path_is_a_data_error() {
    let dir = workdir("nodata");
    std::fs::write(
        dir.join("cifar.json"),
        r#"{"dataset": {"kind": "cifar10", "path": "/nonexistent/cifar"}, "rounds": 1}"#,
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["run", "--config", "cifar.json"])
        .current_dir(&dir)
        .env_remove("PROTOGUARD_DATA_DIR")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{:?}", out);
}

#[test]
fn set_overrides_reach_the_echoed_config() {
    let dir = workdir("set");
    let config = tiny_config(&dir);
    let out = run(
        &[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--set",
            "seed=99",
            "--set",
            "defense.alpha=0.7",
            "--out",
            "r.json",
        ],
        &dir,
    );
    assert!(out.status.success(), "{:?}", out);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 99);
    assert_eq!(report["config"]["defense"]["alpha"], 0.7);
}

#[test]
fn sweep_produces_ordered_reports_and_summary() {
    let dir = workdir("sweep");
    let config = tiny_config(&dir);
    let out = run(
        &[
            "sweep",
            "--config",
            config.to_str().unwrap(),
            "--over",
            "defense.alpha=0.3,0.5,0.7,0.9",
            "--out-dir",
            "sw",
            "--parallel",
            "2",
        ],
        &dir,
    );
    assert!(out.status.success(), "{:?}", out);
    for i in 0..4 {
        let path = dir.join(format!("sw/sweep_{:03}.json", i));
        assert!(path.is_file(), "missing {:?}", path);
    }
    let summary = std::fs::read_to_string(dir.join("sw/summary.tsv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 5); // header + 4 rows
    assert!(lines[0].starts_with("index\tkey\tvalue"));
    for (i, alpha) in ["0.3", "0.5", "0.7", "0.9"].iter().enumerate() {
        assert!(
            lines[i + 1].starts_with(&format!("{}\tdefense.alpha\t{}", i, alpha)),
            "row {}: {}",
            i,
            lines[i + 1]
        );
    }
}

#[test]
fn dump_consistency_writes_tsv() {
    let dir = workdir("dump");
    let config = tiny_config(&dir);
    let out = run(
        &[
            "dump-consistency",
            "--config",
            config.to_str().unwrap(),
            "--out",
            "c.tsv",
        ],
        &dir,
    );
    assert!(out.status.success(), "{:?}", out);
    let tsv = std::fs::read_to_string(dir.join("c.tsv")).unwrap();
    let header = tsv.lines().next().unwrap();
    assert!(header.starts_with("round\tbatch\tsample_id\tlabel\tpoisoned\tscore\tp_value\tbenign"));
    assert!(header.ends_with("v2")); // 3 classes -> v0..v2
    assert_eq!(tsv.lines().count(), 121); // header + 120 train rows
}
