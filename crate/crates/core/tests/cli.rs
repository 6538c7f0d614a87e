//! Exit codes, manifests and determinism of the `mdqs` binary.

use std::path::Path;
use std::process::{Command, Output};

fn mdqs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdqs"))
        .args(args)
        .env_remove("MDQS_SEED")
        .output()
        .expect("spawn mdqs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_64_with_help() {
    let o = mdqs(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(64));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(mdqs(&["audit", "--bogus"]).status.code(), Some(64));
    assert_eq!(mdqs(&["--help"]).status.code(), Some(0));
}

#[test]
fn synth_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mdqs(&["synth", "--n", "100", "--seed", "7", "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["synthetic.jsonl", "synthetic_spec.json", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn synth_without_seed_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdqs(&["synth", "--n", "10", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\n").unwrap();
    let run = |out: &Path, env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mdqs"));
        c.args(["synth", "--n", "20", "--config", p(&cfg), "--out", p(out)]);
        match env {
            Some(v) => c.env("MDQS_SEED", v),
            None => c.env_remove("MDQS_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        std::fs::read(out.join("synthetic.jsonl")).unwrap()
    };
    let from_cfg = run(&dir.path().join("x"), None);
    let from_env = run(&dir.path().join("y"), Some("2"));
    let flag_equiv = {
        let out = dir.path().join("z");
        assert!(mdqs(&["synth", "--n", "20", "--seed", "2", "--out", p(&out)]).status.success());
        std::fs::read(out.join("synthetic.jsonl")).unwrap()
    };
    assert_ne!(from_cfg, from_env);
    assert_eq!(from_env, flag_equiv);
}

#[test]
fn audit_without_reference_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let line = r#"{"schema":1,"sample_id":"s","task":"qa","producer_id":"p","query":"q","output":"o","evaluator_scores":{"a":1.0,"b":2.0},"dims":{"model_prior":0.1,"cost_prior":0.2,"structure":0.3,"semantic":0.4,"alignment":0.5,"agreement":0.6}}"#;
    let text: String = (0..3).map(|i| line.replace("\"s\"", &format!("\"s{i}\"")) + "\n").collect();
    std::fs::write(&data, text).unwrap();
    let o = mdqs(&["audit", "--input", p(&data), "--out", p(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("reference"), "{}", stderr(&o));
}

#[test]
fn validate_counts_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    assert!(mdqs(&["synth", "--n", "2000", "--seed", "3", "--out", p(&syn)]).status.success());
    let out = dir.path().join("v");
    let o = mdqs(&["validate", "--input", p(&syn.join("synthetic.jsonl")), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("2000 valid, 0 invalid"));

    // one malformed line out of ten: nine samples plus a sidecar entry
    let lines: Vec<String> = std::fs::read_to_string(syn.join("synthetic.jsonl"))
        .unwrap()
        .lines()
        .take(10)
        .map(String::from)
        .collect();
    let mut broken = lines.clone();
    broken[4] = "{ not json".into();
    let data = dir.path().join("broken.jsonl");
    std::fs::write(&data, broken.join("\n") + "\n").unwrap();
    let out2 = dir.path().join("v2");
    let o = mdqs(&["validate", "--input", p(&data), "--out", p(&out2)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("9 valid"));
    let sidecar = std::fs::read_to_string(out2.join("ingest_errors.jsonl")).unwrap();
    assert_eq!(sidecar.lines().count(), 1);
    assert!(sidecar.contains("\"line\":5"));

    let o = mdqs(&["validate", "--strict", "--input", p(&data), "--out", p(&dir.path().join("v3"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 5"));
}

#[test]
fn invalid_records_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let a = r#"{"sample_id":"dup","task":"qa","producer_id":"p","gt":0.5}"#;
    std::fs::write(&data, format!("{a}\n{a}\n")).unwrap();
    let o = mdqs(&["validate", "--input", p(&data), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(dir.path().join("o/validation.json").is_file());
}

#[test]
fn missing_input_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdqs(&["score", "--input", p(&dir.path().join("nope.jsonl")), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_bound_column_is_rejected_before_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let line = r#"{"sample_id":"s","task":"qa","producer_id":"p","query":"q","output":"a b c","reference":"a b c","evaluator_scores":{"x":1.0,"y":0.0},"gt":0.5}"#;
    std::fs::write(&data, format!("{line}\n")).unwrap();
    let o = mdqs(&["score", "--input", p(&data), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alignment"), "{}", stderr(&o));
}

#[test]
fn score_on_fixture_writes_six_dimensions() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = mdqs(&["score", "--config", p(&fixtures.join("replay_200.toml")), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let header = std::fs::read_to_string(out.join("sample_scores.csv")).unwrap();
    let header = header.lines().next().unwrap();
    assert_eq!(
        header,
        "sample_id,task,producer_id,gt,model_prior,cost_prior,structure,semantic,alignment,agreement,composite"
    );
    assert!(out.join("normalization.json").is_file());

    let audit_out = dir.path().join("a");
    let o = mdqs(&["audit", "--config", p(&fixtures.join("replay_200.toml")), "--out", p(&audit_out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dims = std::fs::read_to_string(audit_out.join("dimension_correlations.csv")).unwrap();
    assert_eq!(dims.lines().count(), 7);
}

#[test]
fn frozen_normalization_reproduces_scores() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    assert!(mdqs(&["score", "--config", p(&fixtures.join("replay_200.toml")), "--out", p(&first)]).status.success());
    let cfg = std::fs::read_to_string(fixtures.join("replay_200.toml"))
        .unwrap()
        .replace("input = \"replay_200.jsonl\"", &format!("input = {:?}", p(&fixtures.join("replay_200.jsonl"))));
    let frozen_cfg = dir.path().join("frozen.toml");
    std::fs::write(
        &frozen_cfg,
        format!("{cfg}\n[normalization]\nfrozen = {:?}\n", p(&first.join("normalization.json"))),
    )
    .unwrap();
    let second = dir.path().join("second");
    let o = mdqs(&["score", "--config", p(&frozen_cfg), "--out", p(&second)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(first.join("sample_scores.csv")).unwrap(),
        std::fs::read(second.join("sample_scores.csv")).unwrap()
    );
}

#[test]
fn oracle_simulation_runs_without_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 5\n[sim]\ndata = \"oracle\"\nrounds = 20\nattack_ratios = [0.0]\n").unwrap();
    let out = dir.path().join("o");
    let o = mdqs(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("sim_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(out.join("trust_trajectories.csv").is_file());
}

#[test]
fn calibrate_per_task_from_flags() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    assert!(mdqs(&["synth", "--n", "400", "--seed", "9", "--out", p(&syn)]).status.success());
    let out = dir.path().join("c");
    let o = mdqs(&[
        "calibrate",
        "--input",
        p(&syn.join("synthetic.jsonl")),
        "--threshold",
        "-1",
        "--gate",
        "spearman",
        "--per-task",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("removed []"));
    assert!(out.join("calibration_per_task.json").is_file());
}
