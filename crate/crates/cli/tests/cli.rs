//! End-to-end tests of the `pwainv` binary: exit codes, file formats,
//! flag/file/env precedence, and rerun determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{Complex, DMatrix, DVector};

use pwainv_core::fixtures;
use pwainv_core::model_io::{save_model, ModelFile, ModelRole};
use pwainv_core::partition::Partition;
use pwainv_core::schedule::Schedule;
use pwainv_core::trajectory::{SignalRole, Trajectory};
use pwainv_core::PwaModel;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pwainv"));
    // Isolate every invocation from the ambient environment.
    cmd.env_remove("PWAINV_SEED");
    cmd
}

fn run(args: &[&str]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    cmd.output().expect("binary runs")
}

fn run_with_env(args: &[&str], key: &str, value: &str) -> Output {
    let mut cmd = bin();
    cmd.args(args).env(key, value);
    cmd.output().expect("binary runs")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn write_model(dir: &Path, name: &str, model: &PwaModel) -> PathBuf {
    let path = dir.join(name);
    save_model(&path, &ModelFile::from_model(model, ModelRole::Forward, None)).unwrap();
    path
}

fn write_series(dir: &Path, name: &str, role: SignalRole, values: &[f64]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, Trajectory::scalar(role, 0, values).to_csv()).unwrap();
    path
}

fn read_series(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    Trajectory::from_csv(&text)
        .unwrap()
        .scalar_values()
        .unwrap()
}

fn meta_json(dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("meta.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn z(re: f64) -> Complex<f64> {
    Complex::new(re, 0.0)
}

/// Minimum-phase single-location model with relative degree 1: zero at 0.4,
/// poles at 0.5 and 0.3, so the direct inverse is contracting.
fn minimum_phase_model() -> PwaModel {
    let mats = fixtures::transfer_realization(&[z(0.4)], &[z(0.5), z(0.3)], 1.0).unwrap();
    PwaModel::single_location(mats).unwrap()
}

/// Relative degree 3 exceeds the explicit inverse constructions.
fn degree_three_model() -> PwaModel {
    let mats = fixtures::transfer_realization(&[], &[z(0.1), z(0.2), z(0.3)], 1.0).unwrap();
    PwaModel::single_location(mats).unwrap()
}

/// Two locations whose inverse dynamics need different modal transforms:
/// both have one stable and one anti-stable inverse mode, but with different
/// eigenvectors, so the anchor location's transform leaves the other
/// location's modal blocks coupled.
fn shared_transform_violator() -> PwaModel {
    let loc0 =
        fixtures::transfer_realization(&[z(0.5), z(-1.5)], &[z(0.3), z(0.2), z(0.1)], 1.0)
            .unwrap();
    let loc1 =
        fixtures::transfer_realization(&[z(0.45), z(-1.8)], &[z(0.25), z(0.15), z(0.05)], 1.0)
            .unwrap();
    let partition = Partition::new(
        DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
        DVector::from_row_slice(&[0.0]),
        vec![vec![vec![1]], vec![vec![0]]],
    )
    .unwrap();
    PwaModel::new(
        partition,
        Schedule::Constant {
            locations: vec![loc0, loc1],
        },
    )
    .unwrap()
}

/// Smooth bump with rest padding on both sides.
fn padded_bump(len: usize, pad: usize) -> Vec<f64> {
    let mut r = vec![0.0; len];
    let rise = len - 2 * pad;
    for i in 0..rise {
        let t = (i + 1) as f64 / (rise + 1) as f64;
        let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        r[pad + i] = 0.3 * (s * std::f64::consts::PI).sin();
    }
    r
}

#[test]
fn missing_paths_are_usage_errors() {
    let out = run(&["check", "--model", "/nonexistent/m.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_text(&out).contains("--model"));

    let dir = tempdir();
    let out = run(&[
        "ilc",
        "--scheme",
        "ptype",
        "--config",
        "/nonexistent/bench.json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_text(&out).contains("--config"));
}

#[test]
fn clap_usage_errors_exit_2() {
    // Missing required --out.
    let out = run(&["ilc", "--scheme", "ptype"]);
    assert_eq!(out.status.code(), Some(2));

    // Invalid scheme value.
    let dir = tempdir();
    let out = run(&[
        "ilc",
        "--scheme",
        "bogus",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_prints_assumption_report_json() {
    let dir = tempdir();
    let model_path = write_model(dir.path(), "m.json", &fixtures::ambiguous_preview_model());
    let out = run(&["check", "--model", model_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_text(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout_text(&out)).unwrap();
    assert_eq!(report["siso"]["holds"], true);
    assert_eq!(report["state_based_switching"]["holds"], true);
    assert_eq!(report["equal_component_degrees"]["holds"], true);
    assert_eq!(report["global_degree"], 2);
}

#[test]
fn wrong_degree_exits_11() {
    let dir = tempdir();
    let model_path = write_model(dir.path(), "m.json", &degree_three_model());
    let reference = write_series(dir.path(), "r.csv", SignalRole::Reference, &padded_bump(60, 10));
    let out_dir = dir.path().join("out");
    let out = run(&[
        "invert",
        "--model",
        model_path.to_str().unwrap(),
        "--reference",
        reference.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(11));
    assert!(stderr_text(&out).contains("relative degree"));
}

#[test]
fn shared_transform_violation_exits_12_naming_a9() {
    let dir = tempdir();
    let model_path = write_model(dir.path(), "m.json", &shared_transform_violator());
    let reference = write_series(dir.path(), "r.csv", SignalRole::Reference, &padded_bump(60, 10));
    let out_dir = dir.path().join("out");
    let out = run(&[
        "stable-invert",
        "--model",
        model_path.to_str().unwrap(),
        "--reference",
        reference.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(12), "{}", stderr_text(&out));
    let err = stderr_text(&out);
    assert!(err.contains("A9"), "stderr: {err}");
    assert!(err.contains("residual"), "stderr: {err}");
}

#[test]
fn simulate_then_invert_round_trips_through_files() {
    let dir = tempdir();
    let model_path = write_model(dir.path(), "m.json", &minimum_phase_model());
    let u: Vec<f64> = (0..50).map(|k| (0.2 * k as f64).sin() * 0.5).collect();
    let input = write_series(dir.path(), "u.csv", SignalRole::Input, &u);

    let sim_dir = dir.path().join("sim");
    let out = run(&[
        "simulate",
        "--model",
        model_path.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        sim_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_text(&out));

    let inv_dir = dir.path().join("inv");
    let out = run(&[
        "invert",
        "--model",
        model_path.to_str().unwrap(),
        "--reference",
        sim_dir.join("output.csv").to_str().unwrap(),
        "--out",
        inv_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_text(&out));

    let recovered = read_series(&inv_dir.join("feedforward.csv"));
    assert_eq!(recovered.len(), u.len() - 1);
    for (k, rec) in recovered.iter().enumerate() {
        assert!(
            (rec - u[k]).abs() < 1e-10,
            "sample {k}: {rec} vs {}",
            u[k]
        );
    }
    assert_eq!(meta_json(&inv_dir)["mu_tilde"], 1);
}

#[test]
fn stable_invert_matches_plain_invert_on_minimum_phase_model() {
    let dir = tempdir();
    let model_path = write_model(dir.path(), "m.json", &minimum_phase_model());
    let reference = write_series(dir.path(), "r.csv", SignalRole::Reference, &padded_bump(80, 20));

    let plain_dir = dir.path().join("plain");
    let out = run(&[
        "invert",
        "--model",
        model_path.to_str().unwrap(),
        "--reference",
        reference.to_str().unwrap(),
        "--out",
        plain_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_text(&out));

    let stable_dir = dir.path().join("stable");
    let out = run(&[
        "stable-invert",
        "--model",
        model_path.to_str().unwrap(),
        "--reference",
        reference.to_str().unwrap(),
        "--out",
        stable_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_text(&out));

    let plain = read_series(&plain_dir.join("feedforward.csv"));
    let stable = read_series(&stable_dir.join("feedforward.csv"));
    assert_eq!(plain.len(), stable.len());
    for (k, (a, b)) in plain.iter().zip(&stable).enumerate() {
        assert!((a - b).abs() < 1e-9, "sample {k}: {a} vs {b}");
    }
}

fn small_bench_config(dir: &Path) -> PathBuf {
    let path = dir.join("bench.json");
    fs::write(
        &path,
        r#"{
  "n_truth": 399,
  "n_control": 200,
  "trials": 3,
  "gamma_gradient": 400.0,
  "gamma_ptype": 5.0
}"#,
    )
    .unwrap();
    path
}

#[test]
fn bench_reruns_are_byte_identical() {
    let dir = tempdir();
    let config = small_bench_config(dir.path());
    let mut hashes = Vec::new();
    for name in ["one", "two"] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "bench-printhead",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr_text(&out));
        let mut files: Vec<_> = fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "meta.json")
            .collect();
        files.sort();
        assert!(files.len() >= 13, "expected full output set, got {files:?}");
        let bytes: Vec<(String, Vec<u8>)> = files
            .iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(p).unwrap(),
                )
            })
            .collect();
        hashes.push(bytes);
    }
    assert_eq!(hashes[0].len(), hashes[1].len());
    for (a, b) in hashes[0].iter().zip(&hashes[1]) {
        assert_eq!(a.0, b.0);
        assert!(a.1 == b.1, "{} differs between reruns", a.0);
    }
}

#[test]
fn flag_gain_overrides_config_gain() {
    let dir = tempdir();
    let config = small_bench_config(dir.path());

    let with_flag = dir.path().join("flag");
    let out = run(&[
        "ilc",
        "--scheme",
        "ptype",
        "--config",
        config.to_str().unwrap(),
        "--gain",
        "6",
        "--out",
        with_flag.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_text(&out));
    assert_eq!(meta_json(&with_flag)["gain"], 6.0);

    let from_file = dir.path().join("file");
    let out = run(&[
        "ilc",
        "--scheme",
        "ptype",
        "--config",
        config.to_str().unwrap(),
        "--out",
        from_file.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_text(&out));
    assert_eq!(meta_json(&from_file)["gain"], 5.0);
}

#[test]
fn seed_precedence_flag_over_file_over_env() {
    let dir = tempdir();
    let config = small_bench_config(dir.path());

    // Env fallback applies when neither flag nor file sets the noise block.
    let env_dir = dir.path().join("env");
    let out = run_with_env(
        &[
            "ilc",
            "--scheme",
            "ptype",
            "--config",
            config.to_str().unwrap(),
            "--trials",
            "2",
            "--out",
            env_dir.to_str().unwrap(),
        ],
        "PWAINV_SEED",
        "123",
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_text(&out));
    assert_eq!(meta_json(&env_dir)["seed"], 123);

    // Flag beats env.
    let flag_dir = dir.path().join("flag");
    let out = run_with_env(
        &[
            "ilc",
            "--scheme",
            "ptype",
            "--config",
            config.to_str().unwrap(),
            "--trials",
            "2",
            "--seed",
            "7",
            "--out",
            flag_dir.to_str().unwrap(),
        ],
        "PWAINV_SEED",
        "123",
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_text(&out));
    assert_eq!(meta_json(&flag_dir)["seed"], 7);

    // A noise block in the config beats env.
    let noisy_config = dir.path().join("bench_noise.json");
    fs::write(
        &noisy_config,
        r#"{
  "n_truth": 399,
  "n_control": 200,
  "trials": 2,
  "gamma_ptype": 5.0,
  "noise": { "sigma_process": 0.03, "sigma_measure": 5e-5, "seed": 99 }
}"#,
    )
    .unwrap();
    let file_dir = dir.path().join("file");
    let out = run_with_env(
        &[
            "ilc",
            "--scheme",
            "ptype",
            "--config",
            noisy_config.to_str().unwrap(),
            "--out",
            file_dir.to_str().unwrap(),
        ],
        "PWAINV_SEED",
        "123",
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_text(&out));
    assert_eq!(meta_json(&file_dir)["seed"], 99);
}

#[test]
fn ilc_trials_csv_has_expected_shape() {
    let dir = tempdir();
    let config = small_bench_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run(&[
        "ilc",
        "--scheme",
        "ililc",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_text(&out));
    let trials = fs::read_to_string(out_dir.join("trials.csv")).unwrap();
    let lines: Vec<&str> = trials.lines().collect();
    assert_eq!(lines[0], "trial,nrmse,peak");
    assert_eq!(lines.len(), 4, "header plus one row per trial");
    // Learning should help on the noisy benchmark: last trial beats trial 0.
    let first: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    let last: f64 = lines[3].split(',').nth(1).unwrap().parse().unwrap();
    assert!(last < first, "ililc did not improve: {first} -> {last}");
    // The final input trajectory is on disk and matches the lifted length.
    assert_eq!(read_series(&out_dir.join("feedforward.csv")).len(), 199);
}
