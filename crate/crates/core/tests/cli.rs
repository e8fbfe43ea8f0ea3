use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qubithd"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn qubithd")
}

fn records(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

fn of_kind<'a>(recs: &'a [Value], kind: &str) -> Vec<&'a Value> {
    recs.iter().filter(|r| r["record"] == kind).collect()
}

const SYNTH: &[&str] = &[
    "--dataset",
    "synthetic",
    "--synthetic-classes",
    "3",
    "--synthetic-features",
    "12",
    "--synthetic-per-class",
    "30",
    "--dim",
    "1024",
    "--levels",
    "16",
    "--no-timing",
];

/// Two well separated classes, written as a headerless CSV pair.
fn two_class_csv(dir: &Path) -> (PathBuf, PathBuf) {
    let mut text = String::new();
    for i in 0..10 {
        let d = i as f64 * 0.01;
        text.push_str(&format!("{},{},{},a\n", 0.1 + d, 0.2 - d, 0.1));
        text.push_str(&format!("{},{},{},b\n", 0.9 - d, 0.8 + d, 0.9));
    }
    let train = dir.join("train.csv");
    let test = dir.join("test.csv");
    fs::write(&train, &text).unwrap();
    fs::write(&test, &text).unwrap();
    (train, test)
}

#[test]
fn train_with_one_epoch_emits_one_epoch_record() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.model");
    let mut args = vec!["train", "--epochs", "1", "--model", model.to_str().unwrap()];
    args.extend_from_slice(SYNTH);
    let out = run(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let recs = records(&out);
    assert_eq!(of_kind(&recs, "epoch").len(), 1);
    assert_eq!(recs[0]["record"], "manifest");
    assert_eq!(recs.last().unwrap()["record"], "train-summary");
    let digest = &recs[0]["manifest_digest"];
    assert!(digest.as_str().unwrap().len() == 64);
    assert!(recs.iter().all(|r| &r["manifest_digest"] == digest));
    assert!(model.is_file());
}

#[test]
fn default_train_caps_epoch_records_at_thirty() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.model");
    let mut args = vec![
        "train",
        "--patience",
        "100",
        "--model",
        model.to_str().unwrap(),
    ];
    args.extend_from_slice(SYNTH);
    let out = run(&args);
    assert!(out.status.success());
    let n = of_kind(&records(&out), "epoch").len();
    assert!(n <= 30 && n > 0, "{n} epoch records");
}

#[test]
fn missing_dataset_exits_two_without_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.model");
    let out = run(&[
        "train",
        "--dataset",
        "isolet",
        "--data-dir",
        dir.path().join("absent").to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
    assert!(!model.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--dataset", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--dataset", "csv"]).status.code(), Some(2));
    let mut args = vec!["train", "--alpha", "0.2"];
    args.extend_from_slice(SYNTH);
    assert_eq!(run(&args).status.code(), Some(2));
}

#[test]
fn eval_on_training_fixture_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = two_class_csv(dir.path());
    let model = dir.path().join("m.model");
    let data = [
        "--dataset",
        "csv",
        "--train-file",
        train.to_str().unwrap(),
        "--test-file",
        test.to_str().unwrap(),
    ];
    let mut args = vec!["train", "--dim", "2048", "--model", model.to_str().unwrap()];
    args.extend_from_slice(&data);
    assert!(run(&args).status.success());

    let mut args = vec![
        "eval",
        "--split",
        "train",
        "--model",
        model.to_str().unwrap(),
    ];
    args.extend_from_slice(&data);
    let out = run(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let recs = records(&out);
    let s = of_kind(&recs, "eval-summary")[0];
    assert_eq!(s["accuracy_binary"], 1.0);
    assert_eq!(s["accuracy_cosine"], 1.0);
    assert_eq!(s["confusion_binary"], serde_json::json!([[10, 0], [0, 10]]));
    assert!(s["margin_binary"]["min"].as_f64().unwrap() > 0.0);
    assert!(s["latency"]["binary_median_ns"].as_f64().unwrap() > 0.0);
    assert!(s["latency"]["queries"].as_u64().unwrap() >= 1000);
}

#[test]
fn eval_refuses_corrupt_and_future_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = two_class_csv(dir.path());
    let model = dir.path().join("m.model");
    let data = [
        "--dataset",
        "csv",
        "--train-file",
        train.to_str().unwrap(),
        "--test-file",
        test.to_str().unwrap(),
    ];
    let mut args = vec!["train", "--dim", "256", "--model", model.to_str().unwrap()];
    args.extend_from_slice(&data);
    assert!(run(&args).status.success());
    let bytes = fs::read(&model).unwrap();

    let bad_magic = dir.path().join("magic.model");
    let mut b = bytes.clone();
    b[0] = b'X';
    fs::write(&bad_magic, b).unwrap();
    let future = dir.path().join("future.model");
    let mut b = bytes.clone();
    b[4..8].copy_from_slice(&99u32.to_le_bytes());
    fs::write(&future, b).unwrap();

    for (path, needle) in [
        (&bad_magic, "magic"),
        (&future, "unsupported model file version 99"),
    ] {
        let mut args = vec!["eval", "--model", path.to_str().unwrap()];
        args.extend_from_slice(&data);
        let out = run(&args);
        assert_eq!(out.status.code(), Some(1));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{err}");
    }
}

#[test]
fn compare_emits_three_variants_per_epoch() {
    let mut args = vec!["compare", "--seeds", "1", "--epochs", "2"];
    args.extend_from_slice(SYNTH);
    let out = run(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let recs = records(&out);
    let epochs = of_kind(&recs, "compare-epoch");
    assert_eq!(epochs.len(), 6);
    for v in ["baseline", "deterministic", "stochastic"] {
        assert_eq!(epochs.iter().filter(|r| r["variant"] == v).count(), 2);
    }
    let summary = of_kind(&recs, "compare-summary")[0];
    assert_eq!(summary["variants"].as_array().unwrap().len(), 3);
    assert!(summary["median_one_shot_binary_test_accuracy"].is_number());
}

#[test]
fn sweep_flags_cutoffs_at_or_above_sigma() {
    let mut args = vec!["sweep", "--beta-grid", "0.25,0.5,1.0,2.0", "--epochs", "2"];
    args.extend_from_slice(SYNTH);
    let out = run(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let points = records(&out);
    let points = of_kind(&points, "sweep-point");
    let flags: Vec<(f64, bool)> = points
        .iter()
        .map(|p| {
            (
                p["beta"].as_f64().unwrap(),
                p["cutoff_not_below_sigma"].as_bool().unwrap(),
            )
        })
        .collect();
    assert_eq!(
        flags,
        vec![(0.25, false), (0.5, false), (1.0, true), (2.0, true)]
    );
}

#[test]
fn sweep_over_dimensions_reports_each() {
    let mut args = vec!["sweep", "--dim-grid", "1000,10000", "--epochs", "2"];
    args.extend_from_slice(SYNTH);
    let out = run(&args);
    assert!(out.status.success());
    let recs = records(&out);
    let dims: Vec<u64> = of_kind(&recs, "sweep-point")
        .iter()
        .map(|p| p["summary"]["dim"].as_u64().unwrap())
        .collect();
    assert_eq!(dims, vec![1000, 10000]);
    assert!(of_kind(&recs, "sweep-point")
        .iter()
        .all(|p| p["summary"]["best_test_accuracy_binary"].is_number()));
}

#[test]
fn singleton_sweep_equals_train_summary() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.model");
    let mut args = vec!["train", "--epochs", "4", "--model", model.to_str().unwrap()];
    args.extend_from_slice(SYNTH);
    let train = records(&run(&args));
    let mut args = vec![
        "sweep",
        "--epochs",
        "4",
        "--dim-grid",
        "1024",
        "--levels-grid",
        "16",
    ];
    args.extend_from_slice(SYNTH);
    let sweep = records(&run(&args));
    let mut expected = of_kind(&train, "train-summary")[0].clone();
    let obj = expected.as_object_mut().unwrap();
    obj.remove("record");
    obj.remove("manifest_digest");
    assert_eq!(of_kind(&sweep, "sweep-point")[0]["summary"], expected);
}

#[test]
fn identical_runs_produce_identical_streams() {
    let dir = tempfile::tempdir().unwrap();
    let go = |name: &str, timing: bool| {
        let model = dir.path().join(name);
        let mut args = vec!["train", "--epochs", "5", "--model", model.to_str().unwrap()];
        args.extend(SYNTH.iter().filter(|a| !timing || **a != "--no-timing"));
        let out = run(&args);
        assert!(out.status.success());
        (out.stdout, fs::read(model).unwrap())
    };
    let (a, ma) = go("a.model", false);
    let (b, mb) = go("b.model", false);
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    // with timing on, the manifest digests still agree
    let (c, _) = go("c.model", true);
    let first = |s: &[u8]| -> Value {
        serde_json::from_str(String::from_utf8_lossy(s).lines().next().unwrap()).unwrap()
    };
    assert_eq!(first(&a)["manifest_digest"], first(&c)["manifest_digest"]);
    assert!(String::from_utf8_lossy(&c).contains("wall_ms"));
    assert!(!String::from_utf8_lossy(&a).contains("wall_ms"));
}

#[test]
fn metrics_flag_writes_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.model");
    let metrics = dir.path().join("metrics.jsonl");
    let mut args = vec![
        "train",
        "--epochs",
        "2",
        "--model",
        model.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
    ];
    args.extend_from_slice(SYNTH);
    let out = run(&args);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = fs::read_to_string(metrics).unwrap();
    assert_eq!(text.lines().count(), 4);
}
