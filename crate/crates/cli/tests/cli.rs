//! End-to-end CLI checks: subcommands, file outputs, and exit codes
//! (0 success, 2 validation, 3 fit failure).

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rtspec"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rtspec_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_and_fit_iv_roundtrip() {
    let dir = temp_dir("iv");
    let sim = bin()
        .args(["simulate", "iv", "--seed", "5", "--out-dir"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    let csv = dir.join("iv.csv");
    assert!(csv.exists());
    assert!(dir.join("iv_truth.json").exists());

    let out = dir.join("fit");
    let fit = bin()
        .arg("fit-iv")
        .arg(&csv)
        .args(["--out-dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let stdout = String::from_utf8_lossy(&fit.stdout);
    assert!(stdout.contains("r_s"), "stdout: {stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let r_s = json["iv"]["r_s_ohm"].as_f64().unwrap();
    assert!((r_s - 7e3).abs() / 7e3 < 0.02, "r_s = {r_s}");
}

#[test]
fn fit_rc_reports_capacitance_and_note() {
    let dir = temp_dir("rc");
    let sim = bin()
        .args(["simulate", "rc-sweep", "--seed", "9", "--out-dir"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(sim.status.success());
    let fit = bin()
        .arg("fit-rc")
        .arg(dir.join("rc.csv"))
        .arg("--out-dir")
        .arg(dir.join("fit"))
        .output()
        .unwrap();
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let stdout = String::from_utf8_lossy(&fit.stdout);
    assert!(stdout.contains("tau_rc"));
    assert!(stdout.contains("397.9 kHz") || stdout.contains("note:"));
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("fit/report.json")).unwrap(),
    )
    .unwrap();
    let tau = json["rc"]["tau_rc_s"].as_f64().unwrap();
    assert!((tau - 0.4e-6).abs() / 0.4e-6 < 0.05, "tau = {tau}");
    let c = json["rc"]["capacitance_f"].as_f64().unwrap();
    assert!((c - 57.1e-12).abs() < 2e-12);
    assert!(json["rc"]["note"].as_str().unwrap().contains("3.98 MHz"));
}

#[test]
fn geometry_solve_prints_distance() {
    let dir = temp_dir("geom");
    let out = bin()
        .args(["geometry", "solve", "--out-dir"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("d = 53.2"), "stdout: {stdout}");
    assert!(dir.join("geometry.json").exists());

    // Custom spec file with two hole rows per side.
    let spec = dir.join("geometry.txt");
    std::fs::write(&spec, "a_nm = 248\nr_nm = 70\nrows_per_side = 2\n").unwrap();
    let out2 = bin()
        .args(["geometry", "solve", "--spec"])
        .arg(&spec)
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out2.status.success());
    let stdout2 = String::from_utf8_lossy(&out2.stdout);
    assert!(stdout2.contains("d = 35.7"), "stdout: {stdout2}");
}

#[test]
fn missing_input_is_a_validation_error() {
    let dir = temp_dir("missing");
    let out = bin()
        .arg("fit-scan")
        .arg(dir.join("does-not-exist.csv"))
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_kind_is_a_validation_error() {
    let dir = temp_dir("badkind");
    let out = bin()
        .args(["simulate", "warp-drive", "--out-dir"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_failure_exit_code_and_keep_going() {
    let dir = temp_dir("flatrc");
    let mut csv = String::from("f_ac_hz,intensity_counts_per_s\n");
    for k in 0..30 {
        csv.push_str(&format!("{},5.0\n", 1000 * (k + 1)));
    }
    let input = dir.join("rc.csv");
    std::fs::write(&input, csv).unwrap();

    let out = bin()
        .arg("fit-rc")
        .arg(&input)
        .arg("--out-dir")
        .arg(dir.join("a"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    // The report is still written before the failure propagates.
    assert!(dir.join("a/report.txt").exists());

    let out2 = bin()
        .arg("fit-rc")
        .arg(&input)
        .arg("--keep-going")
        .arg("--out-dir")
        .arg(dir.join("b"))
        .output()
        .unwrap();
    assert!(out2.status.success());
}

#[test]
fn report_runs_experiment_files() {
    let dir = temp_dir("report");
    let desc = "kind = rc-sweep\nseed = 11\nrc.n_points = 25\nrc.noise_rel = 0.005\n";
    let path = dir.join("exp.txt");
    std::fs::write(&path, desc).unwrap();
    let out = bin()
        .arg("report")
        .arg(&path)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("out/report.txt").exists());
    assert!(dir.join("out/report.json").exists());
    assert!(dir.join("out/rc_fit.dat").exists());
}
