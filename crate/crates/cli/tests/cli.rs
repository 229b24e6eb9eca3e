//! End-to-end tests driving the compiled binary.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cbfpds"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tmp(name: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("cbfpds-cli-test-{name}-{}", std::process::id()));
    p
}

#[test]
fn simulate_filtered_loop_reaches_origin() {
    let out_path = tmp("sim.csv");
    let out = run(&[
        "simulate",
        "--scenario",
        "builtin:paper-example",
        "--controller",
        "cbf",
        "--a",
        "1",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&out_path).unwrap();
    let last = csv.lines().last().unwrap();
    let cols: Vec<f64> = last
        .split(',')
        .take(3)
        .map(|v| v.parse().unwrap())
        .collect();
    // Columns: t, x1, x2 — final state should sit at the origin.
    assert!((cols[1].powi(2) + cols[2].powi(2)).sqrt() < 1e-3);
    std::fs::remove_file(out_path).ok();
}

#[test]
fn simulate_rejects_negative_constraint_parameter() {
    let out = run(&[
        "simulate",
        "--scenario",
        "builtin:paper-example",
        "--controller",
        "cbf",
        "--a",
        "-1",
        "--out",
        tmp("never.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_rejects_unknown_builtin() {
    let out = run(&[
        "simulate",
        "--scenario",
        "builtin:no-such-thing",
        "--controller",
        "cbf",
        "--out",
        tmp("never2.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bounds_reports_expected_constants() {
    let out = run(&["bounds", "--scenario", "builtin:paper-example"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let m1 = v["m1"].as_f64().unwrap();
    assert!((m1 - 3.972920681171737).abs() < 1e-9);
    assert!(v["a_star"].as_f64().unwrap() > 0.0);
    assert_eq!(v["provenance"]["l_grad_h"]["kind"], "analytic");
}

#[test]
fn bounds_rejects_unit_eps_fraction() {
    let out = run(&[
        "bounds",
        "--scenario",
        "builtin:paper-example",
        "--eps-fraction",
        "1.0",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_inclusion_passes_above_threshold() {
    let out = run(&[
        "check-inclusion",
        "--scenario",
        "builtin:paper-example",
        "--a",
        "200",
        "--grid",
        "6",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // Every report line is standalone JSON with a pass flag.
    for line in stdout(&out).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["pass"], true);
    }
}

#[test]
fn sweep_prints_distance_table() {
    let out = run(&[
        "sweep",
        "--scenario",
        "builtin:paper-example",
        "--a-list",
        "1,10",
        "--t-final",
        "4",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("a,sup_distance"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    let d: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    // Tighter constraint parameter tracks the projected reference better.
    assert!(d[1] < d[0]);
}

#[test]
fn equilibria_finds_boundary_trap_with_mismatched_metric() {
    let out = run(&[
        "equilibria",
        "--scenario",
        "builtin:paper-example-wrongP",
        "--a",
        "1",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let found = v.as_array().unwrap().iter().any(|e| {
        let p = e["point"].as_array().unwrap();
        let stable = e["classification"] == "Stable";
        let on_boundary = e["boundary"] == true;
        let close = (p[0].as_f64().unwrap() + 2.985).abs() < 1e-2
            && (p[1].as_f64().unwrap() - 2.777).abs() < 1e-2;
        stable && on_boundary && close
    });
    assert!(found, "expected the stable boundary equilibrium: {v}");
}

#[test]
fn reproduce_both_variants_pass() {
    let out = run(&["reproduce"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("[PASS] CorrectP"));
    assert!(text.contains("[PASS] WrongP"));
    assert!(!text.contains("[FAIL]"));
}

#[test]
fn plot_writes_svg_with_contour_and_curve() {
    let csv_path = tmp("plot-traj.csv");
    let svg_path = tmp("plot.svg");
    let sim = run(&[
        "simulate",
        "--scenario",
        "builtin:paper-example",
        "--controller",
        "cbf",
        "--t-final",
        "5",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(sim.status.success());
    let out = run(&[
        "plot",
        "--scenario",
        "builtin:paper-example",
        "--traj",
        csv_path.to_str().unwrap(),
        "--out",
        svg_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("<polyline"));
    assert!(svg.matches("<line").count() > 50);
    std::fs::remove_file(csv_path).ok();
    std::fs::remove_file(svg_path).ok();
}

#[test]
fn plot_rejects_missing_trajectory_file() {
    let out = run(&[
        "plot",
        "--scenario",
        "builtin:paper-example",
        "--traj",
        "/nonexistent/traj.csv",
        "--out",
        tmp("never.svg").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn scenario_file_round_trips_through_simulate() {
    // Export the builtin, reload it from disk, and simulate from the file.
    let sc = cbfpds::scenario::builtin("paper-example", 1.0).unwrap();
    let sf = cbfpds::scenario::file::ScenarioFile::from_scenario(&sc);
    let path = tmp("scenario.json");
    std::fs::write(&path, sf.to_json()).unwrap();
    let out_path = tmp("file-sim.csv");
    let out = run(&[
        "simulate",
        "--scenario",
        path.to_str().unwrap(),
        "--controller",
        "pds",
        "--t-final",
        "10",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_path.exists());
    std::fs::remove_file(path).ok();
    std::fs::remove_file(out_path).ok();
}
