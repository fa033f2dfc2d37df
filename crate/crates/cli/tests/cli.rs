use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hankel-scs"));
    c.env_remove("HANKEL_SCS_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn hankel-scs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_signal(dir: &TempDir) -> std::path::PathBuf {
    let sig = dir.path().join("sig.json");
    let model = dir.path().join("model.json");
    let out = run(&[
        "gen", "--n", "63", "--rank", "3", "--ratio", "0.6", "--min-sep", "1.5", "--seed", "5", "--out", path_str(&sig), "--model-out",
        path_str(&model),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    sig
}

#[test]
fn gen_then_recover_round_trip() {
    let dir = TempDir::new().unwrap();
    let sig = gen_signal(&dir);
    let doc: Value = serde_json::from_str(&fs::read_to_string(&sig).unwrap()).unwrap();
    assert_eq!(doc["n"], 63);
    assert_eq!(doc["observed"].as_array().unwrap().len(), 37);

    let res = dir.path().join("res.json");
    for solver in ["shgd", "pgd"] {
        let out = run(&["recover", "--input", path_str(&sig), "--rank", "3", "--solver", solver, "--tol", "1e-9", "--out", path_str(&res)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let doc: Value = serde_json::from_str(&fs::read_to_string(&res).unwrap()).unwrap();
        assert_eq!(doc["termination"], "tol_reached");
        assert_eq!(doc["x_hat"].as_array().unwrap().len(), 63);
    }

    let model: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("model.json")).unwrap()).unwrap();
    assert_eq!(model["r"], 3);
}

#[test]
fn same_seed_same_file() {
    let a = run(&["gen", "--n", "31", "--rank", "2", "--m", "12", "--sigma", "0.1", "--seed", "9"]);
    let b = run(&["gen", "--n", "31", "--rank", "2", "--m", "12", "--sigma", "0.1", "--seed", "9"]);
    let c = run(&["gen", "--n", "31", "--rank", "2", "--m", "12", "--sigma", "0.1", "--seed", "10"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["recover"])), 1);
    assert_eq!(code(&run(&["gen", "--ratio", "1.5"])), 1);
    assert_eq!(code(&run(&["recover", "--input", "/nonexistent/sig.json", "--rank", "2"])), 1);

    let dir = TempDir::new().unwrap();
    let sig = gen_signal(&dir);
    assert_eq!(code(&run(&["recover", "--input", path_str(&sig), "--rank", "3", "--step", "fixed:-1"])), 1);
    assert_eq!(code(&run(&["recover", "--input", path_str(&sig), "--rank", "3", "--solver", "admm"])), 1);
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn solver_failure_exits_two() {
    let dir = TempDir::new().unwrap();
    let sig = dir.path().join("zero.json");
    let zeros = vec![[0.0, 0.0]; 31];
    fs::write(&sig, serde_json::json!({ "n": 31, "observed": [0, 3, 5, 9], "samples": zeros }).to_string()).unwrap();
    // An all-zero observation has no rank-2 structure to recover.
    let out = run(&["recover", "--input", path_str(&sig), "--rank", "2"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    // A rank larger than the lift is an argument error, not a solver one.
    assert_eq!(code(&run(&["recover", "--input", path_str(&sig), "--rank", "40"])), 1);
}

#[test]
fn config_file_is_applied_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let sig = gen_signal(&dir);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"r": 3, "max_iters": 4, "rel_change_tol": 0.0}"#).unwrap();
    let res = dir.path().join("res.json");
    let out = run(&["recover", "--input", path_str(&sig), "--config", path_str(&cfg), "--out", path_str(&res)]);
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_str(&fs::read_to_string(&res).unwrap()).unwrap();
    assert_eq!(doc["iters"], 4);
    assert_eq!(doc["termination"], "max_iters");

    let out = run(&["recover", "--input", path_str(&sig), "--config", path_str(&cfg), "--max-iters", "6", "--out", path_str(&res)]);
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_str(&fs::read_to_string(&res).unwrap()).unwrap();
    assert_eq!(doc["iters"], 6);

    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(code(&run(&["recover", "--input", path_str(&sig), "--config", path_str(&cfg)])), 1);
}

#[test]
fn phase_csv_is_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = ["phase", "--n", "31", "--ranks", "1,2", "--ratios", "0.3,0.6", "--trials", "3", "--no-timing", "--seed", "4"];
    let out = bin().args(args).args(["--out", path_str(&a), "--threads", "1"]).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = bin().args(args).args(["--out", path_str(&b)]).env("HANKEL_SCS_THREADS", "3").output().unwrap();
    assert_eq!(code(&out), 0);

    let csv = fs::read_to_string(&a).unwrap();
    assert_eq!(csv, fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "r,p,m,successes,trials,mean_iters,mean_ms");
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1].starts_with("1,0.3,9,"));

    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("b.csv.json")).unwrap()).unwrap();
    assert_eq!(meta["kind"], "phase");
    assert_eq!(meta["spec"]["n"], 31);
    assert_eq!(meta["spec"]["seed"], 4);
    assert_eq!(meta["host"]["threads"], 3);
}

#[test]
fn bad_thread_env_is_a_usage_error() {
    let out = bin().args(["selftest", "--cases", "1"]).env("HANKEL_SCS_THREADS", "many").output().unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn noise_and_timing_emit_csv() {
    let out = run(&["noise", "--n", "31", "--rank", "2", "--sample-counts", "20", "--sigmas", "0.01,0.1", "--trials", "2"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sigma_e,snr_db,m,mean_rmse");
    assert!(lines[1].starts_with("0.01,40,20,"));
    assert_eq!(lines.len(), 3);

    let out = run(&["timing", "--sizes", "62", "--rank", "2", "--m", "30", "--trials", "2", "--repeats", "1", "--targets", "0.01", "--no-timing"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "n,solver,target,mean_ms,mean_iters,ratio,reached,trials");
    assert!(text.contains("62,shgd,0.01,,"));
    assert!(text.contains("62,pgd,0.01,,"));
}

#[test]
fn selftest_passes_and_detects_corrupted_weights() {
    let out = run(&["selftest", "--cases", "8", "--max-n", "41"]);
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 10);

    let out = run(&["selftest", "--cases", "4", "--max-n", "41", "--corrupt-weights"]);
    assert_eq!(code(&out), 3);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("FAIL isometry")));
}
