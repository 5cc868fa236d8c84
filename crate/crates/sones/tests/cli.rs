//! Black-box tests of the `sones` binary: exit codes, output artifacts, and
//! determinism.

use std::path::Path;
use std::process::{Command, Output};

use sones::probing::{parse_rational, validate_frequencies, Rational, ValidationLevel};

fn sones_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sones"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    sones_bin().args(args).current_dir(cwd).output().expect("binary should launch")
}

const SHORT_SCENARIO: &str = r#"
[map]
builtin = "paper_example"
theta_star = [1.0, 2.0]

[probing]
amplitudes = [0.1, 0.1]
frequencies = [500, 300]
axis = 1

[gains]
k = [0.02, 0.02]
omega_l = 1.0
omega_h = 1.0
omega_r = 1.0

[initial]
theta_hat = [1.0, 2.0]
t_hat_diag = -50.0
eta = 0.0

[simulation]
loop = "newton"
duration = 0.5
dt = 1e-4
output_stride = 100

[outputs]
trajectory_csv = "traj.csv"
summary_json = "summary.json"
"#;

fn write_scenario(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, SHORT_SCENARIO).unwrap();
    path
}

#[test]
fn check_frequencies_valid_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["check-frequencies", "--frequencies", "500,300"], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("ok"), "stdout: {stdout}");
}

#[test]
fn check_frequencies_invalid_exits_two_with_identifier() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["check-frequencies", "--frequencies", "300,600"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("2*omega"), "stdout: {stdout}");

    let out = run(&["check-frequencies", "--frequencies", "100,100"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("omega_i = omega_j"), "stdout: {stdout}");
}

#[test]
fn check_frequencies_rejects_garbage_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["check-frequencies", "--frequencies", "five,300"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn search_frequencies_output_revalidates() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["search-frequencies", "--dim", "2", "--lo", "1", "--hi", "50"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let freqs: Vec<Rational> = stdout
        .trim()
        .split(',')
        .map(|s| parse_rational(s).unwrap())
        .collect();
    assert_eq!(freqs.len(), 2);
    assert!(validate_frequencies(&freqs, ValidationLevel::Full).is_empty());
}

#[test]
fn run_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(
            &["run", scenario.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()],
            dir.path(),
        );
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let csv_a = std::fs::read(out_a.join("traj.csv")).unwrap();
    let csv_b = std::fs::read(out_b.join("traj.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "repeated runs must produce identical bytes");

    let text = String::from_utf8(csv_a).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "t,theta_hat_1,theta_hat_2,Hhat_1,Hhat_2,Lambda_11,Lambda_12,Lambda_21,Lambda_22,\
         That_11,That_12,That_21,That_22,eta,y"
    );
    // duration 0.5 at dt 1e-4 with stride 100: samples at 0, 0.01, ..., 0.5
    assert_eq!(text.lines().count(), 1 + 51);

    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_a.join("summary.json")).unwrap()).unwrap();
    assert!(summary["final_theta_hat"].is_array());
}

#[test]
fn run_averaged_reports_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let out_dir = dir.path().join("avg");
    let out = run(
        &[
            "run",
            scenario.to_str().unwrap(),
            "--averaged",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("summary.json")).unwrap()).unwrap();
    let theta_tilde = report["equilibrium_theta_tilde"].as_array().unwrap();
    for v in theta_tilde {
        assert!(v.as_f64().unwrap().abs() < 1e-4);
    }
    let eta = report["equilibrium_eta_tilde"].as_f64().unwrap();
    assert!((eta - 0.0075).abs() < 0.001, "eta_tilde = {eta}");
}

#[test]
fn estimate_prints_matching_derivatives() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let out = run(&["estimate", scenario.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // theta_hat sits at the target, where the estimators are exact
    for (est, exact) in report["estimated"]["hessian_column"]
        .as_array()
        .unwrap()
        .iter()
        .zip(report["exact"]["hessian_column"].as_array().unwrap())
    {
        assert!((est.as_f64().unwrap() - exact.as_f64().unwrap()).abs() < 1e-6);
    }
    let est = report["estimated"]["third_slice"].as_array().unwrap();
    let exact = report["exact"]["third_slice"].as_array().unwrap();
    for (er, xr) in est.iter().zip(exact) {
        for (e, x) in er.as_array().unwrap().iter().zip(xr.as_array().unwrap()) {
            assert!((e.as_f64().unwrap() - x.as_f64().unwrap()).abs() < 1e-6);
        }
    }
}

#[test]
fn levelset_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let grid = dir.path().join("grid.csv");
    let out = run(
        &[
            "levelset",
            scenario.to_str().unwrap(),
            "--order",
            "1",
            "--nx",
            "11",
            "--ny",
            "11",
            "--out",
            grid.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&grid).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x,y,value");
    assert_eq!(text.lines().count(), 1 + 11 * 11);
}

#[test]
fn invalid_scenario_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, SHORT_SCENARIO.replace("[500, 300]", "[100, 100]")).unwrap();
    let out = run(&["run", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("error"), "stderr: {stderr}");
}

#[test]
fn missing_scenario_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["run", "no-such-file.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
