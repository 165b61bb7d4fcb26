use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn example(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name);
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn theta(i: usize) -> Value {
    example(&format!("theta{i}.json"))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coupled-lqr")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn synthesize(cfg: &Value) -> Value {
    let dir = TempDir::new().unwrap();
    let path = write_json(dir.path(), "cfg.json", cfg);
    run_ok(&["synthesize", "--config", s(&path), "--out", s(dir.path())]);
    let text = fs::read_to_string(dir.path().join("controller.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn stage_dims(doc: &Value) -> Vec<u64> {
    doc["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["n_t"].as_u64().unwrap())
        .collect()
}

fn zero_noise(cfg: &mut Value) {
    cfg["noise"] = json!({
        "model": {"type": "gaussian", "mean": [0, 0, 0, 0], "cov": [[0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]}
    });
}

#[test]
fn uncoupled_controller_keeps_plant_dimension() {
    let doc = synthesize(&theta(7));
    let dims = stage_dims(&doc);
    assert_eq!(dims.len(), 101);
    assert!(dims.iter().all(|&d| d == 4));
}

#[test]
fn history_dimension_grows_then_saturates() {
    let mut cfg = theta(2);
    cfg["coupling"]["k"] = json!(2);
    cfg["plant"]["N"] = json!(6);
    assert_eq!(stage_dims(&synthesize(&cfg)), vec![4, 8, 12, 12, 12, 12, 12]);
}

#[test]
fn long_memory_reaches_full_history() {
    let doc = synthesize(&theta(8));
    let dims = stage_dims(&doc);
    assert_eq!(dims[..10], [4, 8, 12, 16, 20, 24, 28, 32, 36, 40]);
    assert!(dims[10..].iter().all(|&d| d == 40));
}

#[test]
fn malformed_matrix_reports_path() {
    let dir = TempDir::new().unwrap();
    let mut cfg = theta(2);
    cfg["plant"]["A"][2] = json!([0, 0, 1]);
    let path = write_json(dir.path(), "cfg.json", &cfg);
    let out = run(&["synthesize", "--config", s(&path), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("plant.A"), "{err}");
}

#[test]
fn unknown_field_is_rejected() {
    let dir = TempDir::new().unwrap();
    let mut cfg = theta(2);
    cfg["ensemble"]["n_trails"] = json!(10);
    let path = write_json(dir.path(), "cfg.json", &cfg);
    let out = run(&["simulate", "--config", s(&path), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("n_trails"), "{err}");
}

#[test]
fn zero_noise_intervals_vanish() {
    let dir = TempDir::new().unwrap();
    let mut cfg = theta(2);
    zero_noise(&mut cfg);
    let path = write_json(dir.path(), "cfg.json", &cfg);
    run_ok(&["simulate", "--config", s(&path), "--out", s(dir.path()), "--trials", "20"]);
    let rows = csv_rows(&dir.path().join("intervals.csv"));
    assert_eq!(rows.len(), 101 * 2);
    for row in rows {
        assert_eq!(row[3].parse::<f64>().unwrap(), 0.0, "{row:?}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let mut cfg = theta(9);
    cfg["output"]["trials"] = json!(true);
    let path = write_json(dir.path(), "cfg.json", &cfg);
    let read = |out: &Path| {
        ["summary.csv", "intervals.csv", "trials.csv"].map(|f| fs::read(out.join(f)).unwrap())
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["simulate", "--config", s(&path), "--out", s(&a), "--trials", "200"]);
    run_ok(&["simulate", "--config", s(&path), "--out", s(&b), "--trials", "200", "--threads", "3"]);
    assert_eq!(read(&a), read(&b));
    let c = dir.path().join("c");
    run_ok(&["simulate", "--config", s(&path), "--out", s(&c), "--trials", "200", "--seed", "7"]);
    assert_ne!(read(&a)[0], read(&c)[0]);
}

#[test]
fn single_point_sweep_matches_simulate() {
    let dir = TempDir::new().unwrap();
    let mut base = theta(1);
    base["ensemble"]["n_trials"] = json!(300);
    write_json(dir.path(), "base.json", &base);
    let sweep = json!({
        "schema": 1,
        "base_path": "base.json",
        "points": [{"beta": 1.5, "k": 9, "lambda": 0.2}, {"beta": 1.5, "k": 9, "lambda": 0.2}]
    });
    let sweep_path = write_json(dir.path(), "sweep.json", &sweep);
    run_ok(&["sweep", "--config", s(&sweep_path), "--out", s(dir.path())]);
    let frontier = csv_rows(&dir.path().join("frontier.csv"));
    assert_eq!(frontier.len(), 2);
    assert_eq!(frontier[0], frontier[1]);

    let mut single = theta(9);
    single["ensemble"]["n_trials"] = json!(300);
    let sim_path = write_json(dir.path(), "single.json", &single);
    run_ok(&["simulate", "--config", s(&sim_path), "--out", s(dir.path())]);
    let summary = &csv_rows(&dir.path().join("summary.csv"))[0];
    // frontier: beta,k,lambda,d,u,p,J0 ; summary: beta,k,lambda,n,seed,d,u,p,J0
    assert_eq!(frontier[0][..3], summary[..3]);
    assert_eq!(frontier[0][3..7], summary[5..9]);
    assert_eq!(frontier[0][7], "");
}

#[test]
fn bundled_sweep_grid_shape() {
    let dir = TempDir::new().unwrap();
    let sweep = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/sweep.json");
    run_ok(&["sweep", "--config", s(&sweep), "--out", s(dir.path()), "--trials", "5"]);
    let rows = csv_rows(&dir.path().join("frontier.csv"));
    assert_eq!(rows.len(), 21 * 3 * 3);
    for k in ["1", "5", "9"] {
        for lambda in ["0", "0.2", "1"] {
            let panel = rows.iter().filter(|r| r[1] == k && r[2] == lambda).count();
            assert_eq!(panel, 21, "k={k} lambda={lambda}");
        }
    }
    assert!(rows.iter().all(|r| r[7].is_empty()));
}

#[test]
fn verify_zero_noise_passes() {
    let dir = TempDir::new().unwrap();
    let mut cfg = theta(2);
    zero_noise(&mut cfg);
    cfg["plant"]["N"] = json!(20);
    let path = write_json(dir.path(), "cfg.json", &cfg);
    let out = run(&["verify", "--config", s(&path), "--out", s(dir.path()), "--trials", "50"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], json!(true));
}

#[test]
fn verify_flags_corrupted_controller() {
    let dir = TempDir::new().unwrap();
    let mut cfg = theta(2);
    cfg["plant"]["N"] = json!(20);
    let path = write_json(dir.path(), "cfg.json", &cfg);
    run_ok(&["synthesize", "--config", s(&path), "--out", s(dir.path())]);
    let ctrl = dir.path().join("controller.json");
    let mut doc: Value = serde_json::from_str(&fs::read_to_string(&ctrl).unwrap()).unwrap();
    let k00 = doc["stages"][3]["K"][0][0].as_f64().unwrap();
    doc["stages"][3]["K"][0][0] = json!(k00 + 0.5);
    let bad = write_json(dir.path(), "bad.json", &doc);

    let ok = run(&["verify", "--config", s(&path), "--out", s(dir.path()), "--trials", "200", "--controller", s(&ctrl)]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let out = run(&["verify", "--config", s(&path), "--out", s(dir.path()), "--trials", "200", "--controller", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}
