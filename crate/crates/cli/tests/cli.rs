use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn sdgl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdgl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sdgl(args);
    assert!(
        out.status.success(),
        "sdgl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--out-dir", s(dir)];
    args.extend_from_slice(extra);
    ok(&args);
    dir.join("series.csv")
}

/// A small trained model: synthetic data plus a two-epoch checkpoint.
fn trained(tmp: &TempDir, extra: &[&str]) -> (PathBuf, PathBuf) {
    let data = synth(&tmp.path().join("syn"), &[]);
    let run = tmp.path().join("run");
    let mut args = vec![
        "train",
        "--data",
        s(&data),
        "--epochs",
        "2",
        "--out-dir",
        s(&run),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    (data, run.join("model.sdgl"))
}

#[test]
fn synth_writes_series_and_truth_with_expected_shapes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("a");
    let series = synth(&dir, &["--nodes", "8", "--steps", "512", "--seed", "3"]);
    let text = std::fs::read_to_string(&series).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 8);
    assert_eq!(lines.count(), 512);
    let truth = read_matrix(&dir.join("truth.csv"));
    assert_eq!(truth.len(), 8);
    assert!(truth.iter().all(|r| r.len() == 8));
    let m = manifest(&dir);
    assert_eq!(m["synth"]["seed"], 3);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 4);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    let digest = |name: &str, seed: &str| {
        let dir = tmp.path().join(name);
        synth(&dir, &["--seed", seed]);
        manifest(&dir)["outputs"][0]["sha256"].clone()
    };
    assert_eq!(digest("a", "7"), digest("b", "7"));
    assert_ne!(digest("a", "7"), digest("c", "8"));
}

#[test]
fn synth_with_zero_coupling_is_accepted() {
    let tmp = TempDir::new().unwrap();
    synth(&tmp.path().join("z"), &["--alpha", "0"]);
}

#[test]
fn unstable_synth_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let out = sdgl(&["synth", "--alpha", "5", "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_exits_two_and_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("absent.csv");
    let out = sdgl(&["train", "--data", s(&missing), "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("absent.csv"), "{err}");
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp.path().join("syn"), &[]);
    let digest = |name: &str| {
        let dir = tmp.path().join(name);
        ok(&[
            "train",
            "--data",
            s(&data),
            "--epochs",
            "2",
            "--seed",
            "4",
            "--out-dir",
            s(&dir),
        ]);
        let m = manifest(&dir);
        m["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .find(|o| o["path"].as_str().unwrap().ends_with("model.sdgl"))
            .unwrap()["sha256"]
            .clone()
    };
    assert_eq!(digest("r1"), digest("r2"));
}

#[test]
fn manifest_records_config_ablation_and_data_digest() {
    let tmp = TempDir::new().unwrap();
    let (_, ckpt) = trained(&tmp, &["--ablate", "no_ifm", "--lambda", "0.2"]);
    let m = manifest(ckpt.parent().unwrap());
    assert_eq!(m["command"], "train");
    assert_eq!(m["config"]["ablation"]["no_ifm"], true);
    assert_eq!(m["config"]["lambda"], 0.2);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    let epochs = std::fs::read_to_string(ckpt.parent().unwrap().join("epochs.jsonl")).unwrap();
    assert_eq!(epochs.lines().count(), 2);
}

#[test]
fn manifest_can_be_reused_as_config() {
    let tmp = TempDir::new().unwrap();
    let (data, ckpt) = trained(&tmp, &["--heads", "2"]);
    let again = tmp.path().join("again");
    let m = ckpt.parent().unwrap().join("manifest.json");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&m),
        "--out-dir",
        s(&again),
    ]);
    assert_eq!(
        manifest(&again)["config"],
        manifest(ckpt.parent().unwrap())["config"]
    );
}

#[test]
fn bad_config_field_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let data = synth(&tmp.path().join("syn"), &[]);
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "no_such_field = 1\n").unwrap();
    let out = sdgl(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out-dir",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn text_metric(line: &str, name: &str) -> f64 {
    let mut it = line.split_whitespace();
    while let Some(tok) = it.next() {
        if tok == name {
            return it.next().unwrap().parse().unwrap();
        }
    }
    panic!("{name} missing in {line}");
}

#[test]
fn eval_text_and_json_agree_and_average_is_horizon_mean() {
    let tmp = TempDir::new().unwrap();
    let (data, ckpt) = trained(&tmp, &[]);
    let base = ["eval", "--checkpoint", s(&ckpt), "--data", s(&data)];
    let text = ok(&[&base[..], &["--out-dir", s(&tmp.path().join("e1"))]].concat());
    let json: Value = serde_json::from_str(&ok(&[
        &base[..],
        &["--format", "json", "--out-dir", s(&tmp.path().join("e2"))],
    ]
    .concat()))
    .unwrap();
    let ev = &json["evaluation"];
    let per = ev["per_horizon"].as_array().unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("horizon")).collect();
    assert_eq!(lines.len(), per.len());
    for (line, m) in lines.iter().zip(per) {
        for k in ["mae", "rmse"] {
            assert_eq!(text_metric(line, k), m[k].as_f64().unwrap());
        }
    }
    let avg = text.lines().find(|l| l.starts_with("average")).unwrap();
    assert_eq!(
        text_metric(avg, "mae"),
        ev["overall"]["mae"].as_f64().unwrap()
    );
    let mean = per.iter().map(|m| m["mae"].as_f64().unwrap()).sum::<f64>() / per.len() as f64;
    assert!((mean - ev["overall"]["mae"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn eval_rejects_node_mismatch() {
    let tmp = TempDir::new().unwrap();
    let (_, ckpt) = trained(&tmp, &[]);
    let other = synth(&tmp.path().join("other"), &["--nodes", "5"]);
    let out = sdgl(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&other),
        "--out-dir",
        s(tmp.path()),
    ]);
    assert!(!out.status.success());
}

#[test]
fn predict_writes_one_row_per_horizon_step() {
    let tmp = TempDir::new().unwrap();
    let (data, ckpt) = trained(&tmp, &["--horizon", "2"]);
    let out = tmp.path().join("p");
    ok(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--out-dir",
        s(&out),
    ]);
    let text = std::fs::read_to_string(out.join("forecast.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1..].iter().all(|r| r.split(',').count() == 9));
    let early = sdgl(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--at",
        "3",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(early.status.code(), Some(2));
}

#[test]
fn exported_graphs_are_row_stochastic_and_edges_follow_threshold() {
    let tmp = TempDir::new().unwrap();
    let (data, ckpt) = trained(&tmp, &[]);
    let out = tmp.path().join("g");
    ok(&[
        "export-graphs",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--windows",
        "10,11",
        "--out-dir",
        s(&out),
    ]);
    let a = read_matrix(&out.join("static.csv"));
    for m in [&a, &read_matrix(&out.join("dynamic_w10.csv"))] {
        for row in m {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }
    let d10 = read_matrix(&out.join("dynamic_w10.csv"));
    let d11 = read_matrix(&out.join("dynamic_w11.csv"));
    let gap = d10
        .iter()
        .flatten()
        .zip(d11.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(gap < 0.1, "adjacent windows differ by {gap}");

    let n = a.len() as f64;
    let edges = std::fs::read_to_string(out.join("edges.csv")).unwrap();
    let listed = edges.lines().skip(1).count();
    let expected = a.iter().flatten().filter(|&&v| v >= 1.0 / n).count();
    assert_eq!(listed, expected);
    for line in edges.lines().skip(1) {
        let w: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(w >= 1.0 / n);
    }
}

#[test]
fn export_rejects_bad_windows() {
    let tmp = TempDir::new().unwrap();
    let (data, ckpt) = trained(&tmp, &[]);
    let out = sdgl(&[
        "export-graphs",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--windows",
        "100000",
        "--out-dir",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_dynamic_without_dynamic_branch_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let (data, ckpt) = trained(&tmp, &["--ablate", "no_dyadj"]);
    let bad = sdgl(&[
        "export-graphs",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--windows",
        "0",
        "--out-dir",
        s(tmp.path()),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    ok(&[
        "export-graphs",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--out-dir",
        s(tmp.path()),
    ]);
}
