use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tensorkit::io::{load_result, RunStatus};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tensorkit"))
        .args(args)
        .current_dir(dir)
        .env_remove("TENSORKIT_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn full_rank_hosvd_is_exact_and_hooi_beats_hosvd() {
    let dir = tempfile::tempdir().unwrap();
    let example = fixture("worked_example.tns");
    ok(dir.path(), &["tucker", &example, "--ranks", "3,4,2", "-o", "full.json"]);
    let full = load_result(dir.path().join("full.json")).unwrap();
    assert!(full.relative_error.unwrap() <= 1e-10);
    assert_eq!(full.core.unwrap().shape, vec![3, 4, 2]);

    let rank2 = fixture("rank2.tns");
    ok(dir.path(), &["tucker", &rank2, "--ranks", "1,1,1", "-o", "h.json"]);
    ok(dir.path(), &["tucker", &rank2, "--ranks", "1,1,1", "--method", "hooi", "-o", "o.json"]);
    let h = load_result(dir.path().join("h.json")).unwrap().relative_error.unwrap();
    let o = load_result(dir.path().join("o.json")).unwrap();
    assert!(o.relative_error.unwrap() <= h + 1e-12);
    assert_eq!(o.history[0], h);
}

#[test]
fn cp_fixture_recovers_the_planted_rank() {
    let dir = tempfile::tempdir().unwrap();
    let rank2 = fixture("rank2.tns");
    ok(dir.path(), &["cp", &rank2, "--rank", "2", "--init", "hosvd", "--normalize", "-o", "cp.json"]);
    let doc = load_result(dir.path().join("cp.json")).unwrap();
    assert_eq!(doc.status, RunStatus::Converged);
    assert!(doc.relative_error.unwrap() <= 1e-6);
    assert_eq!(doc.input_shape, Some(vec![4, 3, 3]));
    assert_eq!(doc.factors.len(), 3);
    assert!(doc.wall_time_seconds.is_none());

    ok(dir.path(), &["jennrich", &rank2, "--rank", "2", "-o", "j.json"]);
    let j = load_result(dir.path().join("j.json")).unwrap();
    assert!(j.relative_error.unwrap() <= 1e-10);
}

#[test]
fn generate_then_estimate_meets_the_recovery_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &[
        "generate", "--model", "gmm", "--d", "10", "--k", "3", "--weights", "0.5,0.3,0.2", "--sigma", "0.1",
        "--n", "200000", "--seed", "11", "-o", "gmm.csv",
    ]);
    ok(d, &["estimate", "--model", "gmm", "--k", "3", "--input", "gmm.csv", "--truth", "gmm.csv.truth.json", "-o", "est.json"]);
    let doc = load_result(d.join("est.json")).unwrap();
    let eval = &doc.diagnostics["evaluation"];
    for e in eval["column_errors"].as_array().unwrap() {
        assert!(e.as_f64().unwrap() <= 0.05);
    }
    for e in eval["weight_errors"].as_array().unwrap() {
        assert!(e.as_f64().unwrap() <= 0.03);
    }
    assert!(eval["sigma2_relative_error"].as_f64().unwrap() <= 0.1);
    assert_eq!(doc.factors[0].rows, 10);

    ok(d, &[
        "generate", "--model", "topic", "--d", "20", "--k", "3", "--weights", "0.5,0.3,0.2", "--n", "100000",
        "--seed", "12", "-o", "docs.txt",
    ]);
    ok(d, &["estimate", "--model", "topic", "--k", "3", "--input", "docs.txt", "--truth", "docs.txt.truth.json", "-o", "t.json"]);
    let doc = load_result(d.join("t.json")).unwrap();
    assert_eq!(doc.diagnostics["evaluation"]["column_metric"], "total-variation");
    for e in doc.diagnostics["evaluation"]["column_errors"].as_array().unwrap() {
        assert!(e.as_f64().unwrap() <= 0.05);
    }
    assert!(doc.sigma2.is_none());
}

#[test]
fn default_output_goes_to_the_configured_directory() {
    let work = tempfile::tempdir().unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_tensorkit"))
        .args(["tucker", &fixture("worked_example.tns"), "--ranks", "1,1,1"])
        .current_dir(work.path())
        .env("TENSORKIT_OUTPUT_DIR", out_dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(out_dir.path().join("tucker-result.json").exists());
    assert!(!work.path().join("tucker-result.json").exists());
}

#[test]
fn timing_is_recorded_only_on_request() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["tucker", &fixture("worked_example.tns"), "--ranks", "2,2,2", "--record-timing", "-o", "t.json"]);
    let doc = load_result(dir.path().join("t.json")).unwrap();
    assert!(doc.wall_time_seconds.unwrap() >= 0.0);
}

#[test]
fn failed_estimation_keeps_partial_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--model", "gmm", "--d", "5", "--k", "2", "--n", "3000", "--seed", "2", "-o", "g.csv"]);
    let out = run(d, &["estimate", "--model", "gmm", "--k", "2", "--input", "g.csv", "--max-iters", "1", "-o", "f.json"]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[convergence]: power iteration:"));
    let doc = load_result(d.join("f.json")).unwrap();
    assert_eq!(doc.status, RunStatus::Failed);
    assert!(doc.error.is_some());
    assert!(doc.sigma2.is_some());
    assert!(doc.diagnostics["whitening_defect"].as_f64().unwrap() < 1e-8);
}

#[test]
fn usage_errors_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: [&[&str]; 5] = [
        &["cp"],
        &["frobnicate"],
        &["tucker", "x.tns", "--ranks", "a,b"],
        &["generate", "--model", "gmm", "--d", "4", "--k", "2", "--weights", "0.5,0.6", "--n", "10"],
        &["generate", "--model", "topic", "--d", "4", "--k", "2", "--words-per-doc", "2", "--n", "10"],
    ];
    for args in cases {
        let out = run(d, args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert_eq!(stderr.lines().count(), 1, "{stderr}");
        assert!(stderr.starts_with("error[config]:"), "{stderr}");
    }
    let help = run(d, &["estimate", "--help"]);
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("--model"));
}

#[test]
fn data_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["estimate", "--model", "topic", "--k", "2", "--input", &fixture("short_doc.txt")]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3") && stderr.contains("document 2"), "{stderr}");

    let missing: PathBuf = dir.path().join("absent.tns");
    let out = run(dir.path(), &["cp", missing.to_str().unwrap(), "--rank", "1"]);
    assert_eq!(out.status.code(), Some(3));
}
