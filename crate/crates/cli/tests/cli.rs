use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qcorr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcorr"))
        .args(args)
        .output()
        .expect("running qcorr")
}

fn ok(args: &[&str]) -> String {
    let out = qcorr(args);
    assert!(
        out.status.success(),
        "qcorr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: [&str; 10] = [
    "--hidden",
    "16,16",
    "--max-epochs",
    "3",
    "--patience",
    "2",
    "--phase1-batch",
    "256",
    "--learning-rate",
    "1e-3",
];

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn check_outputs(m: &Value) {
    let outputs = m["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for o in outputs {
        let path = o["path"].as_str().unwrap();
        let bytes = std::fs::read(path).unwrap();
        use sha2::Digest;
        let digest = hex::encode(sha2::Sha256::digest(&bytes));
        assert_eq!(o["sha256"].as_str().unwrap(), digest, "{path}");
    }
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = d.join("raw.qds");
    let eq = d.join("eq.qds");
    let split = d.join("split");

    let out = ok(&["gen", "--count", "40000", "--seed", "5", "--out", s(&raw), "--csv", s(&d.join("raw.csv"))]);
    assert!(out.contains("40000 states"));
    let m = manifest(&d.join("raw.qds.manifest.json"));
    assert_eq!(m["command"], "gen");
    assert_eq!(m["config"]["count"], "40000");
    assert_eq!(m["config"]["measure"], "haar-stick-breaking");
    check_outputs(&m);
    let csv = std::fs::read_to_string(d.join("raw.csv")).unwrap();
    assert_eq!(csv.lines().count(), 40001);

    ok(&["equalize", "--dataset", s(&raw), "--out", s(&eq)]);
    ok(&["split", "--dataset", s(&eq), "--out", s(&split), "--seed", "1"]);
    for f in ["train.qds", "validation.qds", "test.qds", "manifest.json"] {
        assert!(split.join(f).exists(), "{f}");
    }

    let model_dir = d.join("m5");
    let mut args = vec!["train", "--dataset", s(&split), "--out", s(&model_dir), "--n-features", "5"];
    args.extend(TINY);
    ok(&args);
    let m = manifest(&model_dir.join("manifest.json"));
    assert_eq!(m["config"]["n-features"], "5");
    assert_eq!(m["config"]["plan"], "paper");
    check_outputs(&m);
    let history = std::fs::read_to_string(model_dir.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,phase,train_loss,val_loss,val_acc\n"));

    let eval_dir = d.join("eval");
    let out = ok(&[
        "eval",
        "--dataset",
        s(&split),
        "--model",
        s(&model_dir.join("model.qcm")),
        "--out",
        s(&eval_dir),
    ]);
    assert!(out.contains("accuracy"));
    assert!(eval_dir.join("confusion.csv").exists());

    let sweep_dir = d.join("sweep");
    let mut args = vec!["sweep", "--dataset", s(&split), "--out", s(&sweep_dir), "--lengths", "10,1"];
    args.extend(TINY);
    let out = ok(&args);
    assert!(out.lines().count() >= 4);
    for f in ["accuracy_vs_n.csv", "f1_vs_n.csv", "confusion_n10.csv", "confusion_n1.csv", "confusion_n0.csv", "sweep.json"] {
        assert!(sweep_dir.join(f).exists(), "{f}");
    }
    assert!(sweep_dir.join("n1").join("model.qcm").exists());
    check_outputs(&manifest(&sweep_dir.join("manifest.json")));

    let report_dir = d.join("report");
    ok(&["report", "--sweep", s(&sweep_dir), "--out", s(&report_dir)]);
    assert_eq!(
        std::fs::read(report_dir.join("accuracy_vs_n.csv")).unwrap(),
        std::fs::read(sweep_dir.join("accuracy_vs_n.csv")).unwrap()
    );
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small\ncount = 500\nseed = 7\n").unwrap();
    let a = dir.path().join("a.qds");
    ok(&["gen", "--config", s(&cfg), "--out", s(&a)]);
    let m = manifest(&dir.path().join("a.qds.manifest.json"));
    assert_eq!(m["config"]["count"], "500");
    assert_eq!(m["config"]["seed"], "7");

    let b = dir.path().join("b.qds");
    ok(&["gen", "--config", s(&cfg), "--seed", "8", "--out", s(&b)]);
    let m = manifest(&dir.path().join("b.qds.manifest.json"));
    assert_eq!(m["config"]["seed"], "8");
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // missing --count
    assert_eq!(qcorr(&["gen", "--out", s(&d.join("x.qds"))]).status.code(), Some(2));
    // bad plan
    let out = qcorr(&["train", "--dataset", s(d), "--out", s(&d.join("m")), "--plan", "best"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = d.join("bad.qds");
    std::fs::write(&bad, b"not a dataset").unwrap();
    assert_eq!(qcorr(&["equalize", "--dataset", s(&bad), "--out", s(&d.join("e.qds"))]).status.code(), Some(4));
    assert_eq!(
        qcorr(&["equalize", "--dataset", s(&d.join("missing.qds")), "--out", s(&d.join("e.qds"))]).status.code(),
        Some(4)
    );

    let cfg = d.join("bad.cfg");
    std::fs::write(&cfg, "count 5\n").unwrap();
    assert_eq!(qcorr(&["gen", "--config", s(&cfg), "--out", s(&d.join("y.qds"))]).status.code(), Some(2));

    // too few states of some class
    let tiny = d.join("tiny.qds");
    ok(&["gen", "--count", "3", "--out", s(&tiny)]);
    assert_eq!(qcorr(&["equalize", "--dataset", s(&tiny), "--out", s(&d.join("t.qds"))]).status.code(), Some(2));
}

#[test]
fn selftest_small() {
    let out = ok(&["selftest", "--oracle-states", "200", "--hierarchy-states", "2000", "--gradient-configs", "2"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 7, "{out}");
}
