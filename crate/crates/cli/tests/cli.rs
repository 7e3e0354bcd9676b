//! End-to-end tests of the `mulreg` binary: exit codes, file outputs,
//! config merging, and manifest-driven reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mulreg"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mulreg_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mulreg")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn simulate_writes_csv_and_sidecar() {
    let dir = tmp_dir("simulate");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "simulate",
        "--fn",
        "f1",
        "--n",
        "100",
        "--seed",
        "7",
        "--out",
        "s.csv",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&dir.join("s.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "x_1,y");
    assert_eq!(lines.count(), 100);
    let sidecar: serde_json::Value = serde_json::from_str(&read(&dir.join("s.json"))).unwrap();
    assert_eq!(sidecar["seed"], 7);
    assert_eq!(sidecar["n"], 100);
    assert_eq!(sidecar["d"], 1);
    assert_eq!(sidecar["function_id"], "f1");

    // Same seed, byte-identical output.
    let dir2 = tmp_dir("simulate2");
    let out2 = run(&[
        "--out-dir",
        dir2.to_str().unwrap(),
        "simulate",
        "--fn",
        "f1",
        "--n",
        "100",
        "--seed",
        "7",
        "--out",
        "s.csv",
    ]);
    assert!(out2.status.success());
    assert_eq!(csv, read(&dir2.join("s.csv")));
}

#[test]
fn adapt_emits_trace_with_valid_selection() {
    let dir = tmp_dir("adapt");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "adapt",
        "--fn",
        "f1",
        "--n",
        "100",
        "--y",
        "0.5",
        "--mode",
        "practical",
        "--seed",
        "7",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace: serde_json::Value = serde_json::from_str(&read(&dir.join("trace.json"))).unwrap();
    let k_hat = trace["trace"]["k_hat"].as_u64().unwrap();
    let k_n = trace["trace"]["estimates"].as_array().unwrap().len() as u64 - 1;
    assert!(k_hat <= k_n);
    assert!(trace["f_hat_star"].as_f64().unwrap().is_finite());
    assert_eq!(trace["trace"]["mode"], "practical");
}

#[test]
fn estimate_rejects_window_leaving_domain() {
    let dir = tmp_dir("estimate_err");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "estimate",
        "--fn",
        "f1",
        "--n",
        "100",
        "--h",
        "0.3",
        "--y",
        "0.05",
        "--a-low",
        "1",
        "--m-up",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("exits [0,1]"), "stderr: {stderr}");
}

#[test]
fn estimate_fixed_bandwidth_works() {
    let dir = tmp_dir("estimate_ok");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "estimate",
        "--fn",
        "constant:2",
        "--n",
        "100",
        "--h",
        "0.2",
        "--y",
        "0.5",
        "--a-low",
        "1",
        "--m-up",
        "3",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est: serde_json::Value = serde_json::from_str(&read(&dir.join("estimate.json"))).unwrap();
    let f_hat = est["f_hat"].as_f64().unwrap();
    assert!(f_hat > 1.0 && f_hat < 3.0);
}

#[test]
fn estimate_reads_sample_from_disk() {
    let dir = tmp_dir("estimate_data");
    let sim = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "simulate",
        "--fn",
        "constant:2",
        "--n",
        "100",
        "--seed",
        "3",
        "--out",
        "s.csv",
    ]);
    assert!(sim.status.success());
    let data = dir.join("s.csv");
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "estimate",
        "--data",
        data.to_str().unwrap(),
        "--h",
        "0.2",
        "--y",
        "0.5",
        "--a-low",
        "1",
        "--m-up",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est: serde_json::Value = serde_json::from_str(&read(&dir.join("estimate.json"))).unwrap();
    assert!(est["f_hat"].as_f64().unwrap() > 1.0);
}

#[test]
fn config_unknown_key_rejected() {
    let dir = tmp_dir("badcfg");
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"repz": 10}"#).unwrap();
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "adapt",
        "--fn",
        "f1",
        "--n",
        "100",
        "--y",
        "0.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("repz"));
}

#[test]
fn flags_override_config() {
    let dir = tmp_dir("precedence");
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"function_id": "constant:2", "n": 64, "reps": 1000, "y": 0.5, "candidates": [0.2, 0.4]}"#,
    )
    .unwrap();
    let out = run(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "oracle",
        "--reps",
        "4",
        "--seed",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&dir.join("oracle_manifest.json"))).unwrap();
    assert_eq!(manifest["config"]["reps"], 4, "flag must beat config");
    assert_eq!(manifest["config"]["n"], 64);
}

#[test]
fn manifest_reruns_byte_identical() {
    let dir = tmp_dir("manifest");
    let args = [
        "--out-dir",
        dir.to_str().unwrap(),
        "replicate-table",
        "--fn",
        "constant:2",
        "--ns",
        "64",
        "--points",
        "4",
        "--reps",
        "3",
        "--seed",
        "9",
    ];
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = read(&dir.join("risk_table.csv"));
    let manifest_path = dir.join("replicate_table_manifest.json");
    let manifest: serde_json::Value = serde_json::from_str(&read(&manifest_path)).unwrap();
    assert_eq!(manifest["command"], "replicate-table");
    assert!(manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|o| o["sha256"].as_str().unwrap().len() == 64));

    // Re-run purely from the manifest.
    let dir2 = tmp_dir("manifest_rerun");
    let out2 = run(&[
        "--out-dir",
        dir2.to_str().unwrap(),
        "--config",
        manifest_path.to_str().unwrap(),
        "replicate-table",
    ]);
    assert!(out2.status.success(), "{}", String::from_utf8_lossy(&out2.stderr));
    assert_eq!(table, read(&dir2.join("risk_table.csv")));
}

#[test]
fn results_invariant_to_worker_count() {
    let dir1 = tmp_dir("workers1");
    let dir2 = tmp_dir("workers2");
    for (dir, workers) in [(&dir1, "1"), (&dir2, "2")] {
        let out = bin()
            .env("MULREG_WORKERS", workers)
            .args([
                "--out-dir",
                dir.to_str().unwrap(),
                "replicate-table",
                "--fn",
                "constant:2",
                "--ns",
                "64",
                "--points",
                "3",
                "--reps",
                "4",
                "--seed",
                "11",
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        read(&dir1.join("risk_table.csv")),
        read(&dir2.join("risk_table.csv"))
    );
}

#[test]
fn missing_required_flag_is_usage_error() {
    let dir = tmp_dir("missing");
    let out = run(&["--out-dir", dir.to_str().unwrap(), "adapt", "--n", "100"]);
    assert_eq!(out.status.code(), Some(2));
}
