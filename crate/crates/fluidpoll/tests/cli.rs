use std::path::{Path, PathBuf};
use std::process::Command;

use fluidpoll::ExperimentConfig;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fluidpoll"))
}

fn manifest(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL_SIM: &str = r#"{
  "system": {"lambda": [1, 1], "mu": [4, 4], "table": [1, 2], "switchover": [1, 1]},
  "cost": {"type": "linear", "c": [1, 1]},
  "simulation": {"n": [5, 20], "cycles": 300, "replications": 3, "warmup": {"kind": "fixed", "cycles": 50}},
  "seed": 11
}"#;

fn run(args: &[&str]) -> std::process::Output {
    bin().args(args).output().expect("binary runs")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "meta.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn pe_of_symmetric_example() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = manifest("configs/symmetric.json");
    let out = run(&["pe", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pe = read_json(&tmp.path().join("pe.json"));
    assert_eq!(pe["tau"].as_f64().unwrap(), 4.0);
    assert!((pe["cost"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(pe["exhaustive"], Value::Bool(true));
    assert_eq!(pe["seed"], 0);
    assert!(pe["config"]["system"].is_object());
    let csv = std::fs::read_to_string(tmp.path().join("pe_breakpoints.csv")).unwrap();
    assert!(csv.starts_with("# periodic equilibrium breakpoints\n# config: {"));
    assert!(csv.contains("\ntime,marker,q_1,q_2\n0,polling:1,3,1\n"));
    let meta = read_json(&tmp.path().join("meta.json"));
    assert_eq!(meta["command"], "pe");
}

#[test]
fn infeasible_system_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        r#"{"system": {"lambda": [2, 2], "mu": [4, 4], "table": [1, 2], "switchover": [1, 1]},
            "cost": {"type": "linear", "c": [1, 1]}}"#,
    );
    let out = run(&["pe", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("traffic intensity"));
}

#[test]
fn unknown_keys_and_missing_config_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "typo.json", &SMALL_SIM.replace("\"cycles\": 300", "\"cycle\": 300"));
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["pe"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn budget_exhaustion_exits_with_1() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL_SIM.replace("\"replications\": 3", "\"replications\": 1, \"max_events\": 100");
    let cfg = write_config(tmp.path(), "c.json", &text);
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL_SIM);
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "1", "3"].iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        let out = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(data_files(&dir));
    }
    assert_eq!(outputs[0].len(), 7);
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn seed_and_replication_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", SMALL_SIM);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.success());
    assert!(run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "12",
        "--replications",
        "1"
    ])
    .status
    .success());
    let sb = read_json(&b.join("summary.json"));
    assert_eq!(sb["seed"], 12);
    assert_eq!(sb["config"]["simulation"]["replications"], 1);
    assert_ne!(
        std::fs::read(a.join("cycles_n5_rep0.csv")).unwrap(),
        std::fs::read(b.join("cycles_n5_rep0.csv")).unwrap()
    );
    assert!(!b.join("cycles_n5_rep1.csv").exists());
}

#[test]
fn single_scale_sweep_matches_simulate() {
    let cfg = ExperimentConfig::from_json(&SMALL_SIM.replace("[5, 20]", "[20]")).unwrap();
    let sim = fluidpoll::cmd_simulate(&cfg).unwrap();
    let sweep = fluidpoll::cmd_sweep(&cfg).unwrap();
    let summary = |o: &fluidpoll::Outcome| o.files.iter().find(|f| f.name == "summary.json").unwrap().bytes.clone();
    assert_eq!(summary(&sim), summary(&sweep));
    let csv = String::from_utf8(sweep.files[0].bytes.clone()).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], "n,estimate,half_width,c_star,gap,relative_gap");
}

#[test]
fn optimize_then_simulate_uses_the_optimized_control() {
    let text = std::fs::read_to_string(manifest("configs/two_visit.json"))
        .unwrap()
        .replace("\"budget\": 20", "\"budget\": 4")
        .replace("\"n\": [500], \"cycles\": 2000", "\"n\": [2], \"cycles\": 100, \"warmup\": {\"kind\": \"fixed\", \"cycles\": 10}");
    let cfg = ExperimentConfig::from_json(&text).unwrap();
    let opt = fluidpoll::cmd_optimize(&cfg).unwrap();
    let sol: Value = serde_json::from_slice(&opt.files[0].bytes).unwrap();
    let cost = sol["solution"]["cost"].as_f64().unwrap();
    let sim = fluidpoll::cmd_simulate(&cfg).unwrap();
    let summary: Value = serde_json::from_slice(&sim.files.last().unwrap().bytes).unwrap();
    assert_eq!(summary["c_star"].as_f64().unwrap(), cost);
    assert_eq!(summary["r"], sol["solution"]["r"]);
    assert!(summary["r"][1].as_f64().unwrap() < 0.999);
}

#[test]
fn heavy_tailed_switchovers_warn() {
    let text = SMALL_SIM.replace("\"replications\": 3", "\"replications\": 1, \"switchover\": {\"family\": \"lognormal\", \"cv\": 1}");
    let cfg = ExperimentConfig::from_json(&text).unwrap();
    let out = fluidpoll::cmd_simulate(&cfg).unwrap();
    assert!(out.warnings.iter().any(|w| w.contains("moment generating function")));
}

#[test]
fn shipped_configs_parse_and_schema_lists_the_same_keys() {
    for name in ["symmetric", "two_visit", "piecewise"] {
        ExperimentConfig::load(&manifest(&format!("configs/{name}.json"))).unwrap();
    }
    let schema = read_json(&manifest("schema/config.schema.json"));
    let mut keys: Vec<&str> = schema["properties"].as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["control", "cost", "output", "seed", "simulation", "system"]);
    let mut sim: Vec<&str> = schema["properties"]["simulation"]["properties"]
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    sim.sort();
    assert_eq!(sim, ["cycles", "max_events", "n", "replications", "service", "switchover", "warmup"]);
}
