//! End-to-end checks of the `pmusched` binary: output formats, exit
//! codes, and byte-identical replay of artifact-producing runs.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmusched"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tempdir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("pmusched-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn no_arguments_is_usage_error() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["place", "--case", "case14", "--nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn place_topology_prints_published_set() {
    let out = run(&["place", "--case", "case14", "--method", "topology"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).trim(), "N=4: 2 6 7 9");
}

#[test]
fn place_emits_decision_vector() {
    let dir = tempdir("place");
    let emit = dir.join("d.csv");
    let out = run(&[
        "place",
        "--case",
        "case14",
        "--method",
        "topology",
        "--emit",
        emit.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let d = std::fs::read_to_string(&emit).unwrap();
    let ones: Vec<usize> = d
        .lines()
        .enumerate()
        .filter(|(_, v)| *v == "1")
        .map(|(i, _)| i + 1)
        .collect();
    assert_eq!(ones, vec![2, 6, 7, 9]);
    assert_eq!(d.lines().count(), 14);
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("subcommand: place"));
    assert!(manifest.contains("case_sha256: "));
}

#[test]
fn missing_case_is_validation_error() {
    let out = run(&["place", "--case", "/no/such/file", "--method", "topology"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_case_is_validation_error() {
    let dir = tempdir("badcase");
    let path = dir.join("broken");
    std::fs::write(&path, "buses: [1, 2]\nbranches: [{from: 1, x: 0.5}]").unwrap();
    let out = run(&["place", "--case", path.to_str().unwrap(), "--method", "topology"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(err.contains("line"), "stderr: {err}");
}

#[test]
fn schedule_orders_match_pipeline() {
    let out = run(&["schedule", "--case", "case14", "--method", "electrical"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().next().unwrap(), "8 14 1 6 7");
    assert!(text.contains("slot 1 ends t=4: bus 8"));

    let out = run(&["schedule", "--case", "case14", "--method", "topology"]);
    assert_eq!(stdout(&out).lines().next().unwrap(), "7 2 6 9");
}

#[test]
fn schedule_truncation_and_csv() {
    let dir = tempdir("sched");
    let out = run(&[
        "schedule",
        "--case",
        "case14",
        "--method",
        "electrical",
        "--pmus",
        "3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).lines().next().unwrap(), "8 14 1");
    let csv = std::fs::read_to_string(dir.join("schedule.csv")).unwrap();
    assert_eq!(csv, "slot,time,bus\n1,7,8\n2,13,14\n3,20,1\n");
}

#[test]
fn distance_emits_dense_csv_and_lambda() {
    let out = run(&["distance", "--case", "case14", "--adjacency", "20"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lambda_line = text
        .lines()
        .find(|l| l.starts_with("lambda:"))
        .expect("lambda printed");
    let lambda: f64 = lambda_line
        .trim_start_matches("lambda:")
        .trim()
        .parse()
        .unwrap();
    assert!((lambda - 0.157044718681).abs() < 1e-9);
    // 14 distance rows, the lambda line, then 14 adjacency rows
    assert_eq!(text.lines().count(), 29);
    let first_row: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(first_row.len(), 14);
    assert_eq!(first_row[0], "0");
}

#[test]
fn distance_can_export_network_matrices() {
    let dir = tempdir("matrices");
    let inc = dir.join("incidence.csv");
    let lap = dir.join("laplacian.csv");
    let con = dir.join("connectivity.csv");
    let out = run(&[
        "distance",
        "--case",
        "case14",
        "--emit-incidence",
        inc.to_str().unwrap(),
        "--emit-laplacian",
        lap.to_str().unwrap(),
        "--emit-connectivity",
        con.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));

    let inc_text = std::fs::read_to_string(&inc).unwrap();
    assert_eq!(inc_text.lines().count(), 20);
    // first branch joins buses 1 and 2: -1 at bus 1, +1 at bus 2
    assert!(inc_text.lines().next().unwrap().starts_with("-1,1,0,"));

    let lap_text = std::fs::read_to_string(&lap).unwrap();
    assert_eq!(lap_text.lines().count(), 14);
    let first_entry: f64 = lap_text.split(',').next().unwrap().parse().unwrap();
    assert!(first_entry > 0.0, "Laplacian diagonal is positive");

    let con_text = std::fs::read_to_string(&con).unwrap();
    assert!(con_text.lines().next().unwrap().starts_with("1,1,0,0,1,"));
}

#[test]
fn detect_reports_structured_record() {
    let out = run(&[
        "detect", "--case", "case14", "--alpha", "0.05", "--T", "200", "--seed", "7", "--shift",
        "-0.02",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("statistic: "));
    assert!(text.contains("threshold: 15.70"), "text: {text}");
    assert!(text.contains("dof: 20"));
    assert!(text.contains("decision: H1"), "a -2% shift at T=200 is detectable");

    let out_null = run(&[
        "detect", "--case", "case14", "--alpha", "0.05", "--T", "200", "--seed", "7",
    ]);
    assert!(stdout(&out_null).contains("decision: H0"));
}

#[test]
fn simulate_writes_replayable_artifacts() {
    let dir = tempdir("sim");
    let csv_path = dir.join("pd.csv");
    let args = [
        "simulate",
        "--case",
        "case14",
        "--method",
        "topology",
        "--policy",
        "both",
        "--trials",
        "6",
        "--seed",
        "11",
        "--shift",
        "-0.02",
        "--alphas",
        "3",
        "--T",
        "20",
        "--out",
        csv_path.to_str().unwrap(),
    ];
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "slot,time,pd_scheduled,pd_random");
    assert_eq!(lines.count(), 4, "one row per slot");

    let meta = std::fs::read_to_string(Path::new(&format!("{}.meta", csv_path.display()))).unwrap();
    assert!(meta.contains("subcommand: simulate"));
    assert!(meta.contains("seed: 11"));
    assert!(meta.contains("schedule: 7 2 6 9"));

    // replay: identical arguments reproduce identical bytes
    let first = std::fs::read(&csv_path).unwrap();
    let out2 = run(&args);
    assert_eq!(out2.status.code(), Some(0));
    assert_eq!(std::fs::read(&csv_path).unwrap(), first);
}

#[test]
fn simulate_rejects_single_policy() {
    let out = run(&[
        "simulate", "--case", "case14", "--method", "topology", "--policy", "scheduled",
        "--trials", "2", "--out", "/tmp/unused-pd.csv",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn short_frame_is_validation_error() {
    let out = run(&[
        "schedule", "--case", "case14", "--method", "electrical", "--T", "3",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(err.contains("cannot hold"), "stderr: {err}");
}

#[test]
fn simulate_validates_pmu_limit() {
    let out = run(&[
        "simulate", "--case", "case14", "--method", "topology", "--trials", "2", "--pmus", "9",
        "--out", "/tmp/unused-pd2.csv",
    ]);
    assert_eq!(out.status.code(), Some(3));
}
