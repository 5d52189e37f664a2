use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bundlesafe"))
        .args(args)
        .current_dir(cwd)
        .env_remove("BUNDLESAFE_SEED")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_RUN: &str = r#"{
  "spec_version": 1,
  "config_id": "small",
  "env": "integrator",
  "noise_preset": "gaussian_0.1",
  "controller": {"nominal": "aggressive", "filter": true, "kappa": 2.0, "l_b": 0.5, "estimator": {"kind": "truth"}},
  "delta_w": 0.05,
  "n_episodes": 12,
  "horizon": 60,
  "seed": 1
}"#;

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&read(p)).unwrap()
}

#[test]
fn run_writes_results_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_RUN);
    let out = bin(&["run", "--config", &cfg, "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&dir.path().join("o/results.csv"));
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("config_id,env,preset,episode,success,violation,PL,GRS,FSE,MMC,AMC,CSR,ACM,CS,"));
    let s = json(&dir.path().join("o/summary.json"));
    assert_eq!(s["metrics"]["n_episodes"], 12);
    // Nothing but the config and the output directory.
    let mut names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["c.json", "o"]);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL_RUN.replace("\"horizon\": 60", "\"horizon\": 60, \"dtt\": 0.1");
    let cfg = write_config(dir.path(), "c.json", &body);
    let out = bin(&["run", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dtt"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_RUN);
    for o in ["a", "b"] {
        assert!(bin(&["run", "--config", &cfg, "--out", o, "--jobs", "2"], dir.path()).status.success());
    }
    assert!(bin(&["run", "--config", &cfg, "--out", "c", "--seed", "99"], dir.path()).status.success());
    let a = read(&dir.path().join("a/results.csv"));
    assert_eq!(a, read(&dir.path().join("b/results.csv")));
    assert_eq!(read(&dir.path().join("a/summary.json")), read(&dir.path().join("b/summary.json")));
    assert_ne!(a, read(&dir.path().join("c/results.csv")));
}

#[test]
fn seed_variable_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL_RUN);
    let run = |out: &str, seed_flag: &str, env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_bundlesafe"));
        c.args(["run", "--config", &cfg, "--out", out, "--seed", seed_flag]).current_dir(dir.path());
        match env {
            Some(v) => c.env("BUNDLESAFE_SEED", v),
            None => c.env_remove("BUNDLESAFE_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        read(&dir.path().join(out).join("results.csv"))
    };
    assert_eq!(run("x", "5", Some("8")), run("y", "8", None));
}

#[test]
fn verify_sweep_and_floor() {
    let dir = tempfile::tempdir().unwrap();
    let body = |floor: &str, dvs: &str| {
        format!(
            r#"{{"spec_version":1,"config_id":"v","env":"integrator","noise_preset":"none",
            "controller":{{"nominal":"aggressive","filter":true,"kappa":5.0,"l_b":0.5,"estimator":{{"kind":"observer","gain":1.0}}}},
            "delta_w":0.0,"n_episodes":200,"horizon":100,"seed":2,
            "verify":{{"delta_v":{dvs},"calibration_episodes":10{floor}}}}}"#
        )
    };
    let cfg = write_config(dir.path(), "ok.json", &body("", "[0.0]"));
    let out = bin(&["verify", "--config", &cfg, "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&dir.path().join("o/verify.json"));
    assert_eq!(rep[0]["rate"], 0.0);

    let cfg = write_config(dir.path(), "sweep.json", &body("", "[0.4, 0.2, 0.1]"));
    assert!(bin(&["verify", "--config", &cfg, "--out", "s"], dir.path()).status.success());
    assert_eq!(json(&dir.path().join("s/verify.json")).as_array().unwrap().len(), 3);

    let cfg = write_config(dir.path(), "floor.json", &body(r#","floor":0.999"#, "[0.4]"));
    let out = bin(&["verify", "--config", &cfg, "--out", "f"], dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn learn_writes_trace_model_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("building_learn.json");
    let out = bin(&["learn", "--config", cfg.to_str().unwrap(), "--out", "l"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&dir.path().join("l/learn_summary.json"));
    let iters = summary["iterations"].as_u64().unwrap() as usize;
    let trace = read(&dir.path().join("l/trace.csv"));
    assert_eq!(trace.lines().count(), 1 + iters + 1);
    for key in ["plateau", "lambda1", "c1", "r2"] {
        assert!(summary["convergence"][key].is_number(), "{key} missing from {summary}");
    }
    assert!(json(&dir.path().join("l/model.json"))["weights"].is_array());
}

#[test]
fn noiseless_learning_plateau_is_tiny() {
    let dir = tempfile::tempdir().unwrap();
    let body = read(&configs().join("building_learn.json"))
        .replace("\"delta_v\": 0.05", "\"delta_v\": 0.0")
        .replace("\"steps\": 300", "\"steps\": 3000");
    let cfg = write_config(dir.path(), "c.json", &body);
    let out = bin(&["learn", "--config", &cfg, "--out", "l"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&dir.path().join("l/learn_summary.json"));
    let sup = summary["final_error_sup"].as_f64().unwrap();
    assert!(sup <= 1e-8, "{summary}");
}

#[test]
fn ablate_seven_presets() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL_RUN.replace("\"seed\": 1", "\"seed\": 1, \"ablate\": {\"presets\": [\"gaussian_0.1\", \"gaussian_0.3\", \"fixed_bias_0.2\", \"time_varying_bias\", \"delay_50ms\", \"delay_100ms\", \"sensor_failure\"]}");
    let cfg = write_config(dir.path(), "c.json", &body);
    let out = bin(&["ablate", "--config", &cfg, "--out", "a"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cells = json(&dir.path().join("a/ablation.json"));
    assert_eq!(cells.as_array().unwrap().len(), 7);
    assert_eq!(read(&dir.path().join("a/ablation.csv")).lines().count(), 1 + 7 * 12);
}

#[test]
fn compat_on_grid_phase_shift() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("grid_compat.json");
    let out = bin(&["compat", "--config", cfg.to_str().unwrap(), "--out", "c"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&dir.path().join("c/compat.json"));
    assert!(rep["residual1_max"].as_f64().unwrap() <= 1e-9);
    assert!(rep["residual2_max"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn compat_action_env_mismatch_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = read(&configs().join("grid_compat.json")).replace("\"env\": \"grid\"", "\"env\": \"building\"");
    let cfg = write_config(dir.path(), "c.json", &body);
    assert_eq!(bin(&["compat", "--config", &cfg, "--out", "c"], dir.path()).status.code(), Some(2));
}

#[test]
fn report_merges_two_configs() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a.json", SMALL_RUN);
    let b = write_config(dir.path(), "b.json", &SMALL_RUN.replace("\"small\"", "\"other\""));
    assert!(bin(&["run", "--config", &a, "--out", "ra"], dir.path()).status.success());
    assert!(bin(&["run", "--config", &b, "--out", "rb"], dir.path()).status.success());
    let out = bin(&["report", "--out", "rep", "ra/results.csv", "rb/results.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = json(&dir.path().join("rep/comparison.json"));
    let ids: Vec<&str> = table.as_array().unwrap().iter().map(|r| r["config_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["other", "small"]);
    assert_eq!(read(&dir.path().join("rep/merged.csv")).lines().count(), 1 + 24);
}

#[test]
fn bad_arguments_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["run"], dir.path()).status.code(), Some(2));
    assert_eq!(bin(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(bin(&["run", "--config", "missing.json", "--out", "o"], dir.path()).status.code(), Some(2));
}
