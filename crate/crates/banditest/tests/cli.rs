//! End-to-end checks of the command-line interface: exit codes, output
//! formats and byte-level determinism of campaign files.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_banditest"))
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("banditest_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.json");
    std::fs::write(
        &path,
        r#"{
  "structure": {
    "kind": "odd_arm",
    "arm_count": 3,
    "family": { "type": "gaussian_known_variance", "sigma2": 1.0 },
    "odd_arm": 0,
    "odd_param": [0.0],
    "common_param": [1.0]
  },
  "grid": { "log_l": [1.0, 2.0], "gamma": [0.5], "beta": [0.6] },
  "trials": 25,
  "master_seed": 99,
  "switch_cost": 1.0
}"#,
    )
    .unwrap();
    path
}

#[test]
fn oracle_prints_reference_rate_for_the_delay_config() {
    let out = bin().args(["oracle", "--config"]).arg(repo_config("fig3.json")).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let d_line = text.lines().find(|l| l.starts_with("D* = ")).expect("D* line");
    let d: f64 = d_line.trim_start_matches("D* = ").parse().unwrap();
    assert!((d - 0.1156).abs() < 1e-3, "D* = {d}");
    assert!(text.contains("lambda* = ["));
    assert!(text.contains("certificate_gap"));
}

#[test]
fn malformed_config_exits_one_without_output() {
    let dir = temp_dir("badcfg");
    let cfg = dir.join("broken.json");
    std::fs::write(&cfg, "{ definitely not json").unwrap();
    let out_dir = dir.join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.join("campaign.csv").exists());
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let out = bin().args(["oracle", "--nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.to_lowercase().contains("usage"), "stderr: {err}");
}

#[test]
fn bound_requires_positive_logl_and_emits_a_curve() {
    let dir = temp_dir("bound");
    let cfg = write_small_config(&dir);
    let out = bin()
        .args(["bound", "--config"])
        .arg(&cfg)
        .args(["--logl-max", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin()
        .args(["bound", "--config"])
        .arg(&cfg)
        .args(["--logl-max", "5", "--points", "10"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "logL,lower_bound");
    assert_eq!(lines.len(), 11);
    // curve is increasing in logL
    let vals: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(vals.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn run_is_byte_deterministic_across_invocations() {
    let dir = temp_dir("determinism");
    let cfg = write_small_config(&dir);
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let out_dir = dir.join(tag);
        let out = bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read(out_dir.join("campaign.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(text.starts_with("logL,gamma,beta,"));
    for row in text.lines().skip(1) {
        assert_eq!(row.split(',').count(), 9);
    }
}

#[test]
fn run_with_trace_flag_dumps_cell_traces() {
    let dir = temp_dir("celltrace");
    let cfg = dir.join("traced.json");
    std::fs::write(
        &cfg,
        r#"{
  "structure": {
    "kind": "odd_arm",
    "arm_count": 3,
    "family": { "type": "gaussian_known_variance", "sigma2": 1.0 },
    "odd_arm": 0,
    "odd_param": [0.0],
    "common_param": [1.0]
  },
  "grid": { "log_l": [1.0], "gamma": [0.5], "beta": [0.6] },
  "trials": 5,
  "master_seed": 5,
  "switch_cost": 1.0,
  "trace": true
}"#,
    )
    .unwrap();
    let out_dir = dir.join("out");
    let out = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("campaign.csv").exists());
    let trace = std::fs::read_to_string(out_dir.join("trace_beta0.6_gamma0.5_logL1.csv")).unwrap();
    assert!(trace.starts_with("n,arm,active,l_star,z_l_star,z_1,z_2,z_3"));
    assert!(trace.lines().count() >= 2);
}

#[test]
fn trace_emits_step_rows_and_a_summary() {
    let dir = temp_dir("trace");
    let cfg = write_small_config(&dir);
    let out = bin()
        .args(["trace", "--config"])
        .arg(&cfg)
        .args(["--logl", "2", "--gamma", "0.5", "--seed", "7"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,arm,active,l_star,z_l_star,z_1,z_2,z_3");
    assert!(lines.len() >= 3, "expected at least a couple of steps");
    for row in &lines[1..] {
        assert_eq!(row.split(',').count(), 8);
    }
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("stopped at tau ="), "stderr: {err}");
}
