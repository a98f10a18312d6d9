use std::fs;
use std::path::{Path, PathBuf};

use gslab::cli::{self, StudyConfig, EXIT_FAILED, EXIT_OK, EXIT_USAGE};
use gslab::dump;
use serde_json::{json, Value};
use tempfile::TempDir;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn kerr(nodes: usize, count: usize) -> Value {
    json!({
        "family": {
            "kind": "shrinking_ball", "label": "kerr", "p": 4,
            "V": { "kind": "constant", "value": 0 },
            "q_plus": 1, "q_minus": -1, "first_index": 2,
            "eps": { "start": 0.25, "ratio": 0.5, "count": count },
            "center": [0]
        },
        "grid": { "dim": 1, "lo": [-1], "hi": [1], "n_nodes": [nodes] },
        "analysis": { "eps_list": [0.25] },
        "seed": 3
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["gslab".to_string(), cmd.into(), "--config".into(), config.display().to_string()];
    args.extend(["--out".into(), out.display().to_string()]);
    args.extend(extra.iter().map(|s| s.to_string()));
    cli::run_from(args)
}

#[test]
fn validate_accepts_kerr_family() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "kerr.json", &kerr(400, 3));
    assert_eq!(run("validate", &cfg, tmp.path(), &[]), EXIT_OK);
    let report: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("assumptions.json")).unwrap()).unwrap();
    assert_eq!(report["uniform_delta"].as_f64(), Some(1.0));
}

#[test]
fn validate_rejects_negative_potential() {
    let tmp = TempDir::new().unwrap();
    let mut c = kerr(200, 2);
    c["family"]["V"] = json!({ "kind": "constant", "value": -0.5 });
    let cfg = write(tmp.path(), "neg.json", &c);
    assert_eq!(run("validate", &cfg, tmp.path(), &[]), EXIT_FAILED);
}

#[test]
fn malformed_config_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{ \"family\": ").unwrap();
    assert_eq!(run("validate", &cfg, tmp.path(), &[]), EXIT_USAGE);
    let mut c = kerr(200, 2);
    c["colour"] = json!(1);
    let cfg = write(tmp.path(), "unknown.json", &c);
    assert_eq!(run("solve", &cfg, tmp.path(), &[]), EXIT_USAGE);
    assert_eq!(run("solve", &tmp.path().join("missing.json"), tmp.path(), &[]), EXIT_USAGE);
}

#[test]
fn solve_writes_dump_and_repeats_exactly() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "kerr.json", &kerr(400, 3));
    let mut values = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        assert_eq!(run("solve", &cfg, &out, &["--n", "3"]), EXIT_OK);
        let side: Value = serde_json::from_str(&fs::read_to_string(out.join("u_n3.sidecar.json")).unwrap()).unwrap();
        assert_eq!(side["n"].as_u64(), Some(3));
        assert!(side["residual"].as_f64().unwrap() < 1e-6);
        let (header, field) = dump::read_dump(&out.join("u_n3")).unwrap();
        assert_eq!(header.provenance.as_deref(), Some("solver"));
        assert_eq!(field.values().len(), 400);
        values.push((side["s"].as_f64().unwrap(), field.values().to_vec()));
    }
    assert_eq!(values[0].0.to_bits(), values[1].0.to_bits());
    assert_eq!(values[0].1, values[1].1);
}

#[test]
fn solve_rejects_index_outside_family() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "kerr.json", &kerr(200, 2));
    assert_eq!(run("solve", &cfg, tmp.path(), &["--n", "9"]), EXIT_USAGE);
}

#[test]
fn single_member_study_reports_insufficient_n() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "one.json", &kerr(400, 1));
    assert_eq!(run("study", &cfg, tmp.path(), &[]), EXIT_FAILED);
    let summary: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["verdicts"]["insufficient_n"], json!(true));
    let csv = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    // one row per q, with q* = 1 added to the configured 2, 4, inf
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("2,0.25,")));
}

#[test]
fn spectrum_and_oracle_commands_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "kerr.json", &kerr(200, 2));
    assert_eq!(run("spectrum", &cfg, tmp.path(), &[]), EXIT_OK);
    let oracle = configs_dir().join("oracle_reference.json");
    assert_eq!(run("oracle", &oracle, tmp.path(), &["--n", "300"]), EXIT_OK);
    let (header, field) = dump::read_dump(&tmp.path().join("oracle")).unwrap();
    assert_eq!(header.provenance.as_deref(), Some("oracle"));
    assert!(field.values().iter().all(|u| *u > 0.0));
}

#[test]
fn shipped_configs_round_trip() {
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "oracle_reference.json" {
            continue;
        }
        let first = cli::load_study_config(&path).unwrap();
        let text = serde_json::to_string(&first).unwrap();
        let second: StudyConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_value(&first).unwrap(), serde_json::to_value(&second).unwrap(), "{}", path.display());
    }
}

#[test]
fn shipped_configs_validate() {
    let tmp = TempDir::new().unwrap();
    for name in ["kerr.json", "decay.json", "two_point.json", "level_shift_2d.json"] {
        assert_eq!(run("validate", &configs_dir().join(name), tmp.path(), &[]), EXIT_OK, "{name}");
    }
}
