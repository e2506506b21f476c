//! End-to-end pipeline tests against the compiled binary:
//! synth -> split -> predict -> fit -> validate -> report.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_modelguard"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, contents: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

fn two_class_schema() -> &'static str {
    r#"{
        "features": ["f0", "f1"],
        "outputs": [{"name": "label", "task": {"classification": {"classes": 2}}}]
    }"#
}

fn two_class_synth_spec() -> &'static str {
    r#"{
        "features": 2,
        "classes": [
            [{"mean": [0.0, 0.0], "std": [1.0, 1.0], "size": 200}],
            [{"mean": [10.0, 10.0], "std": [1.0, 1.0], "size": 200}]
        ]
    }"#
}

/// Runs the full pipeline in `ws`, returns paths of the produced files.
fn pipeline(ws: &Workspace, validator: &str) -> (PathBuf, PathBuf, PathBuf) {
    ws.write("schema.json", two_class_schema());
    ws.write("synth.json", two_class_synth_spec());
    run_ok(&[
        "synth",
        "--spec",
        &ws.s("synth.json"),
        "--out",
        &ws.s("data.csv"),
        "--seed",
        "5",
    ]);
    run_ok(&[
        "split",
        "--schema",
        &ws.s("schema.json"),
        "--data",
        &ws.s("data.csv"),
        "--out-train",
        &ws.s("train.csv"),
        "--out-test",
        &ws.s("test.csv"),
        "--seed",
        "5",
    ]);
    run_ok(&[
        "predict",
        "--schema",
        &ws.s("schema.json"),
        "--train",
        &ws.s("train.csv"),
        "--data",
        &ws.s("test.csv"),
        "--out",
        &ws.s("preds.csv"),
    ]);
    run_ok(&[
        "fit",
        "--schema",
        &ws.s("schema.json"),
        "--train",
        &ws.s("train.csv"),
        "--validator",
        validator,
        "--out",
        &ws.s("artifact.json"),
    ]);
    run_ok(&[
        "validate",
        "--schema",
        &ws.s("schema.json"),
        "--artifact",
        &ws.s("artifact.json"),
        "--data",
        &ws.s("test.csv"),
        "--predictions",
        &ws.s("preds.csv"),
        "--out",
        &ws.s("validities.jsonl"),
    ]);
    (
        ws.path("test.csv"),
        ws.path("preds.csv"),
        ws.path("validities.jsonl"),
    )
}

fn count_lines(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .count()
}

#[test]
fn full_pipeline_prob_validator() {
    let ws = Workspace::new();
    let (test_csv, _, validities) = pipeline(&ws, "prob");
    // one output line per input row
    assert_eq!(count_lines(&validities), count_lines(&test_csv) - 1);
    // in-distribution samples with a clean predictor: mostly valid
    let text = std::fs::read_to_string(&validities).unwrap();
    let mut vals = Vec::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        if let Some(overall) = v["overall"].as_f64() {
            vals.push(overall);
        }
    }
    vals.sort_by(|a, b| a.total_cmp(b));
    let median = vals[vals.len() / 2];
    assert!(median >= 0.5, "median validity {median}");

    run_ok(&[
        "report",
        "--schema",
        &ws.s("schema.json"),
        "--validities",
        &ws.s("validities.jsonl"),
        "--data",
        &ws.s("test.csv"),
        "--predictions",
        &ws.s("preds.csv"),
        "--out-prefix",
        &format!("{}/", ws.dir.path().display()),
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["outputs"][0]["accuracy"].as_f64(), Some(1.0));
    assert!(ws.path("correct_label.csv").exists());
    assert!(ws.path("incorrect_label.csv").exists());
}

#[test]
fn full_pipeline_knn_and_bishop() {
    for validator in ["knn", "bishop"] {
        let ws = Workspace::new();
        let (test_csv, _, validities) = pipeline(&ws, validator);
        assert_eq!(count_lines(&validities), count_lines(&test_csv) - 1);
    }
}

#[test]
fn refit_is_byte_identical() {
    let ws = Workspace::new();
    pipeline(&ws, "prob");
    let first = std::fs::read(ws.path("artifact.json")).unwrap();
    run_ok(&[
        "fit",
        "--schema",
        &ws.s("schema.json"),
        "--train",
        &ws.s("train.csv"),
        "--validator",
        "prob",
        "--out",
        &ws.s("artifact2.json"),
    ]);
    let second = std::fs::read(ws.path("artifact2.json")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn schema_hash_mismatch_exits_3() {
    let ws = Workspace::new();
    pipeline(&ws, "prob");
    // different schema: extra class
    ws.write(
        "schema3.json",
        r#"{
            "features": ["f0", "f1"],
            "outputs": [{"name": "label", "task": {"classification": {"classes": 3}}}]
        }"#,
    );
    let out = bin()
        .args([
            "validate",
            "--schema",
            &ws.s("schema3.json"),
            "--artifact",
            &ws.s("artifact.json"),
            "--data",
            &ws.s("test.csv"),
            "--predictions",
            &ws.s("preds.csv"),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_error_exits_1_and_data_error_exits_2() {
    let out = bin().args(["fit", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let ws = Workspace::new();
    ws.write("schema.json", two_class_schema());
    let out = bin()
        .args([
            "fit",
            "--schema",
            &ws.s("schema.json"),
            "--train",
            &ws.s("missing.csv"),
            "--validator",
            "prob",
            "--out",
            &ws.s("a.json"),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_same_seed_same_bytes() {
    let ws = Workspace::new();
    ws.write("synth.json", two_class_synth_spec());
    for name in ["a.csv", "b.csv"] {
        run_ok(&[
            "synth",
            "--spec",
            &ws.s("synth.json"),
            "--out",
            &ws.s(name),
            "--seed",
            "42",
        ]);
    }
    assert_eq!(
        std::fs::read(ws.path("a.csv")).unwrap(),
        std::fs::read(ws.path("b.csv")).unwrap()
    );
}

#[test]
fn out_of_range_rows_score_zero() {
    let ws = Workspace::new();
    pipeline(&ws, "prob");
    // rows far outside every training range
    ws.write(
        "far.csv",
        "f0,f1,label\n1e6,1e6,0\n-1e6,1e6,1\n1e6,-1e6,0\n",
    );
    ws.write("far_preds.csv", "out_0\n0\n1\n0\n");
    run_ok(&[
        "validate",
        "--schema",
        &ws.s("schema.json"),
        "--artifact",
        &ws.s("artifact.json"),
        "--data",
        &ws.s("far.csv"),
        "--predictions",
        &ws.s("far_preds.csv"),
        "--out",
        &ws.s("far.jsonl"),
    ]);
    for line in std::fs::read_to_string(ws.path("far.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["overall"].as_f64(), Some(0.0), "line: {line}");
    }
}

#[test]
fn online_mode_runs_and_reports_quality() {
    let ws = Workspace::new();
    pipeline(&ws, "prob");
    run_ok(&[
        "validate",
        "--schema",
        &ws.s("schema.json"),
        "--artifact",
        &ws.s("artifact.json"),
        "--data",
        &ws.s("test.csv"),
        "--predictions",
        &ws.s("preds.csv"),
        "--mode",
        "online",
        "--out",
        &ws.s("online.jsonl"),
    ]);
    let text = std::fs::read_to_string(ws.path("online.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let q = first["outputs"][0]["terms"][0]["quality"].as_f64();
    assert!(q.is_some());
}

#[test]
fn prediction_row_count_mismatch_is_a_data_error() {
    let ws = Workspace::new();
    pipeline(&ws, "prob");
    ws.write("short.csv", "out_0\n0\n");
    let out = bin()
        .args([
            "validate",
            "--schema",
            &ws.s("schema.json"),
            "--artifact",
            &ws.s("artifact.json"),
            "--data",
            &ws.s("test.csv"),
            "--predictions",
            &ws.s("short.csv"),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
