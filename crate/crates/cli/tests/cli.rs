use std::path::Path;
use std::process::{Command, Output};

fn advimmune(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advimmune"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn triangle(dir: &Path, extra: &str) {
    std::fs::write(dir.join("edges.tsv"), "0\t1\n1\t2\n0\t2\n").unwrap();
    std::fs::write(dir.join("logits.csv"), "1.0,0.0\n0.2,0.4\n0.0,1.0\n").unwrap();
    let config = format!(
        r#"{{"dataset": {{"kind": "files", "edges": "edges.tsv", "logits": "logits.csv"}},
            "immune_budget": 2, "out": "run"{extra}}}"#
    );
    std::fs::write(dir.join("config.json"), config).unwrap();
}

#[test]
fn triangle_certifies_three_nodes() {
    let tmp = tempfile::tempdir().unwrap();
    triangle(tmp.path(), "");
    let out = advimmune(&["certify", "--config", "config.json"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("run/certificates.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "node,label_class,worst_class,worst_margin,robust");
    assert_eq!(rows.len(), 4);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["num_nodes"], 3);
}

#[test]
fn immunize_writes_metrics_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    triangle(tmp.path(), "");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let out = advimmune(
            &["immunize", "--config", "config.json", "--scenario", "remove-add"],
            tmp.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let files: Vec<Vec<u8>> = ["mask.csv", "metrics.json", "sweep.csv"]
            .iter()
            .map(|f| std::fs::read(tmp.path().join("run").join(f)).unwrap())
            .collect();
        runs.push(files);
    }
    assert_eq!(runs[0], runs[1]);
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("run/metrics.json")).unwrap()).unwrap();
    for key in [
        "robust_ratio",
        "mean_worst_margin",
        "budget_used",
        "scenario",
        "config_hash",
        "seed",
        "version",
    ] {
        assert!(metrics.get(key).is_some(), "metrics.json lacks {key}");
    }
    assert_eq!(metrics["scenario"], "remove-add");
}

#[test]
fn flags_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    triangle(tmp.path(), "");
    let out = advimmune(
        &[
            "baseline",
            "--config",
            "config.json",
            "--method",
            "random",
            "--seeds",
            "3",
            "--budget",
            "1,2",
            "--local-budget",
            "none",
            "--alpha",
            "0.5",
            "--out",
            "other",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mask = std::fs::read_to_string(tmp.path().join("other/mask_random_C2.csv")).unwrap();
    assert!(mask.lines().any(|l| l == "method,seed,round,src,dst,value"));
    let seeds: std::collections::BTreeSet<&str> = mask
        .lines()
        .filter(|l| l.starts_with("random,"))
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(seeds.len(), 3);
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    triangle(tmp.path(), r#", "unknown_key": 1"#);
    assert_eq!(
        advimmune(&["certify", "--config", "config.json"], tmp.path())
            .status
            .code(),
        Some(2)
    );
    triangle(tmp.path(), "");
    let bad_alpha = advimmune(&["certify", "--config", "config.json", "--alpha", "1.5"], tmp.path());
    assert_eq!(bad_alpha.status.code(), Some(2));
    let missing = advimmune(&["certify", "--config", "nope.json"], tmp.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    triangle(tmp.path(), r#", "max_iterations": 0"#);
    let out = advimmune(&["certify", "--config", "config.json"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("policy iteration"));
}

#[test]
fn report_marks_runs_without_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    triangle(tmp.path(), "");
    assert_eq!(
        advimmune(&["immunize", "--config", "config.json"], tmp.path())
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        advimmune(&["certify", "--config", "config.json", "--out", "partial"], tmp.path())
            .status
            .code(),
        Some(0)
    );
    let out = advimmune(&["report", "."], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert!(report.contains("run"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("partial"));
}
