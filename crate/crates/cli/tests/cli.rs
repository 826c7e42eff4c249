//! End-to-end tests of the `crmsim` binary: exit-code classes, output
//! files, determinism across invocations brokered purely through the
//! filesystem and process boundary.

use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn crmsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crmsim"))
}

fn write_scenario(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

/// One warm worker, one generator stream: enough to produce a log with
/// boots, starts and completions in a fraction of a second.
fn generator_scenario() -> Value {
    json!({
        "hosts": [{
            "host_id": "h1", "cpu_cores": 8, "cpu_freq_mhz": 2600,
            "ram_total_mib": 65536, "ram_reserved_mib": 2048,
            "scratch_total_gib": 500, "vm_slots": 8
        }],
        "templates": [{
            "template_id": "t1", "image_size_gib": 10,
            "cores": 1, "ram_mib": 4096, "scratch_gib": 20
        }],
        "queues": [{"queue_name": "q", "template_id": "t1", "group": "g"}],
        "pool_capacity_gib": 100,
        "initial_vms": [
            {"vm_id": "vm1", "template_id": "t1", "host_id": "h1", "offline_flag": false}
        ],
        "workload": {"mode": "generator", "streams": [{
            "queue": "q", "mean_interarrival_s": 60,
            "runtime": {"dist": "fixed", "value_s": 120},
            "max_jobs": 20
        }]},
        "horizon_s": 1800
    })
}

fn explicit_scenario() -> Value {
    let mut scenario = generator_scenario();
    scenario["workload"] = json!({"mode": "explicit", "jobs": [
        {"job_id": "j1", "queue": "q", "runtime_s": 100, "submit_time_s": 0},
        {"job_id": "j2", "queue": "q", "runtime_s": 100, "submit_time_s": 50}
    ]});
    scenario
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn validate_accepts_a_wellformed_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "scenario.json", &generator_scenario());
    let output = crmsim().arg("validate").arg("--scenario").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    assert!(stdout_of(&output).contains("OK"));
}

#[test]
fn malformed_json_exits_with_the_schema_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ this is not json").unwrap();
    let output = crmsim().arg("validate").arg("--scenario").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(stderr_of(&output).starts_with("error:"));
}

#[test]
fn unknown_scenario_fields_exit_with_the_schema_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = generator_scenario();
    scenario["grid_middleware"] = json!("emi");
    let path = write_scenario(dir.path(), "scenario.json", &scenario);
    let output = crmsim().arg("validate").arg("--scenario").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(stderr_of(&output).contains("grid_middleware"));
}

#[test]
fn dangling_references_exit_with_the_schema_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = generator_scenario();
    scenario["queues"][0]["template_id"] = json!("no-such-template");
    let path = write_scenario(dir.path(), "scenario.json", &scenario);
    let output = crmsim().arg("validate").arg("--scenario").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(stderr_of(&output).contains("no-such-template"));
}

#[test]
fn run_writes_the_log_and_all_metric_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "scenario.json", &generator_scenario());
    let out = dir.path().join("out");
    let output = crmsim()
        .args(["run", "--seed", "7"])
        .arg("--scenario").arg(&path)
        .arg("--out").arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    assert!(stdout_of(&output).contains("digest"));
    for file in ["events.jsonl", "queue_times.csv", "utilization.csv", "actions.csv", "histogram.csv"] {
        assert!(out.join(file).is_file(), "{file} missing");
    }
    let log = std::fs::read_to_string(out.join("events.jsonl")).unwrap();
    assert!(log.lines().count() > 10, "log suspiciously short:\n{log}");
}

#[test]
fn identical_seeds_write_byte_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "scenario.json", &generator_scenario());
    let mut logs = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let output = crmsim()
            .args(["run", "--seed", "42"])
            .arg("--scenario").arg(&path)
            .arg("--out").arg(&out)
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
        logs.push(std::fs::read(out.join("events.jsonl")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn replicas_run_in_their_own_directories_with_distinct_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "scenario.json", &generator_scenario());
    let out = dir.path().join("out");
    let output = crmsim()
        .args(["run", "--seed", "5", "--replicas", "2"])
        .arg("--scenario").arg(&path)
        .arg("--out").arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("seed 5") && stdout.contains("seed 6"), "stdout: {stdout}");
    let r0 = std::fs::read(out.join("r0/events.jsonl")).unwrap();
    let r1 = std::fs::read(out.join("r1/events.jsonl")).unwrap();
    assert_ne!(r0, r1, "replicas must not share a seed");
}

#[test]
fn zero_replicas_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "scenario.json", &generator_scenario());
    let output = crmsim()
        .args(["run", "--replicas", "0"])
        .arg("--scenario").arg(&path)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unknown_flags_are_usage_errors() {
    let output = crmsim().args(["run", "--sideways"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn generated_workloads_are_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "scenario.json", &generator_scenario());
    let run = || {
        let output = crmsim()
            .args(["gen-workload", "--seed", "3"])
            .arg("--scenario").arg(&path)
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
        stdout_of(&output)
    };
    let first = run();
    assert_eq!(first, run(), "same seed must print the same workload");
    let block: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(block["mode"], "explicit");
    let jobs = block["jobs"].as_array().unwrap();
    assert!(!jobs.is_empty() && jobs.len() <= 20);

    // The block drops into a scenario as-is and the result still runs.
    let mut frozen = generator_scenario();
    frozen["workload"] = block;
    let frozen_path = write_scenario(dir.path(), "frozen.json", &frozen);
    let output = crmsim()
        .arg("run")
        .arg("--scenario").arg(&frozen_path)
        .arg("--out").arg(dir.path().join("frozen-out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
}

#[test]
fn gen_workload_writes_the_file_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "scenario.json", &generator_scenario());
    let out = dir.path().join("expanded");
    let output = crmsim()
        .arg("gen-workload")
        .arg("--scenario").arg(&path)
        .arg("--out").arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    let written: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("workload.json")).unwrap()).unwrap();
    assert_eq!(written["mode"], "explicit");
}

#[test]
fn gen_workload_refuses_an_already_explicit_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "scenario.json", &explicit_scenario());
    let output = crmsim().arg("gen-workload").arg("--scenario").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(stderr_of(&output).contains("already explicit"));
}

#[test]
fn report_summarizes_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "scenario.json", &explicit_scenario());
    let out = dir.path().join("out");
    let run = crmsim()
        .arg("run")
        .arg("--scenario").arg(&path)
        .arg("--out").arg(&out)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "stderr: {}", stderr_of(&run));
    let output = crmsim().arg("report").arg("--out").arg(&out).output().unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr_of(&output));
    let stdout = stdout_of(&output);
    assert!(stdout.contains("queue time by provisioning path"), "stdout: {stdout}");
    assert!(stdout.contains("core-seconds by group"), "stdout: {stdout}");
    assert!(stdout.contains("free"), "both jobs ride the warm worker: {stdout}");
}

#[test]
fn report_on_a_missing_directory_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = crmsim()
        .arg("report")
        .arg("--out").arg(dir.path().join("never-ran"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));
}
