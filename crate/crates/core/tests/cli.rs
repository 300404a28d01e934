use std::path::Path;
use std::process::{Command, Output};

use failop_core::scenario::{compute_metrics, read_trace, EpisodeMetrics, MetricParams, ScenarioConfig, TraceFormat};

fn failop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_failop")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_trace_and_matching_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let data = dir.path().join("data.csv");
    let out = failop(&["run", "--duration", "3", "--out", path(&trace), "--dataset", path(&data)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let printed: EpisodeMetrics = serde_json::from_slice(&out.stdout).unwrap();
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().count(), 151);
    let records = read_trace(&trace, TraceFormat::Csv).unwrap();
    assert_eq!(compute_metrics(&records, &MetricParams::from_config(&ScenarioConfig::default())), printed);
    assert!(std::fs::read_to_string(&data).unwrap().lines().count() > 1);

    let recomputed = failop(&["metrics", path(&trace)]);
    assert_eq!(recomputed.status.code(), Some(0));
    let again: EpisodeMetrics = serde_json::from_slice(&recomputed.stdout).unwrap();
    assert_eq!(again, printed);
}

#[test]
fn jsonl_trace_by_extension() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let out = failop(&["run", "--duration", "1", "--seed", "3", "--out", path(&trace)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read_trace(&trace, TraceFormat::Jsonl).unwrap().len(), 50);
}

#[test]
fn invalid_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "duration = -1.0\n").unwrap();
    let out = failop(&["validate", "--scenario", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(failop(&["validate", "--scenario", path(&bad)]).status.code(), Some(2));
    let good = dir.path().join("good.toml");
    std::fs::write(&good, "[initial]\nev = [110.0, 18.0]\n").unwrap();
    assert_eq!(failop(&["validate", "--scenario", path(&good)]).status.code(), Some(0));
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    assert_eq!(failop(&["metrics", path(&missing)]).status.code(), Some(3));
    let out = dir.path().join("no_dir").join("trace.csv");
    assert_eq!(failop(&["run", "--duration", "0.1", "--out", path(&out)]).status.code(), Some(3));
}

#[test]
fn bench_reports_every_phase() {
    let out = failop(&["bench", "--duration", "1", "--repetitions", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let phases: Vec<String> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["phase"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(phases, ["solve", "learn", "infer", "tick"]);
    assert_eq!(failop(&["bench", "--duration", "1", "--repetitions", "0"]).status.code(), Some(2));
}

#[test]
fn collision_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("close.toml");
    // 6 m behind the front car and 12 m/s faster
    std::fs::write(&scen, "[initial]\nev = [114.0, 30.0]\n").unwrap();
    let trace = dir.path().join("trace.csv");
    let out = failop(&["run", "--scenario", path(&scen), "--out", path(&trace)]);
    assert_eq!(out.status.code(), Some(4));
    let records = read_trace(&trace, TraceFormat::Csv).unwrap();
    assert!(records.last().unwrap().crash);
}
