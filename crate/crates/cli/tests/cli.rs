use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn trapsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trapsim"))
        .args(args)
        .env_remove("TRAPSIM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn zero_density() -> Value {
    json!({
        "schema_version": 1,
        "kind": "survival-grid",
        "model": {"d": 1, "gamma": 1.0, "kappa": 1.0, "rho": 1.0, "nu": 0.0},
        "t_grid": [1.0, 2.0, 4.0],
        "seed": 11,
        "budget": {"n_outer": 20, "n_inner": 3}
    })
}

fn small_grid() -> Value {
    json!({
        "schema_version": 1,
        "kind": "survival-grid",
        "model": {"d": 1, "gamma": "inf", "kappa": 1.0, "rho": 1.0, "nu": 1.0},
        "t_grid": [0.5, 1.0],
        "seed": 5,
        "estimators": [
            {"estimator": "direct", "n_outer": 2000, "n_inner": 1},
            {"estimator": "range", "n_outer": 200, "n_inner": 50}
        ]
    })
}

#[test]
fn zero_density_gives_certain_survival() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &zero_density());
    let out = dir.path().join("out");
    let res = trapsim(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let mut reader = csv::Reader::from_path(out.join("results.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let value = headers.iter().position(|h| h == "value").unwrap();
    let se = headers.iter().position(|h| h == "se").unwrap();
    let rows: Vec<_> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 9);
    for r in &rows {
        assert_eq!(r[value].parse::<f64>().unwrap(), 1.0);
        assert_eq!(r[se].parse::<f64>().unwrap(), 0.0);
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["passed"], json!(true));
    assert!(manifest["host"]["wall_time_s"].is_number());
}

#[test]
fn strict_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &small_grid());
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let res = trapsim(&["run", &cfg, "--strict", "--out", out.to_str().unwrap()]);
            assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
            out
        })
        .collect();
    for file in ["results.csv", "fits.json", "manifest.json"] {
        let a = std::fs::read(runs[0].join(file)).unwrap();
        let b = std::fs::read(runs[1].join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let manifest = std::fs::read_to_string(runs[0].join("manifest.json")).unwrap();
    assert!(!manifest.contains("wall_time"));
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &small_grid());
    let read = |workers: &str| {
        let out = dir.path().join(format!("w{workers}"));
        let res = trapsim(&["run", &cfg, "--strict", "--workers", workers, "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0));
        std::fs::read(out.join("results.csv")).unwrap()
    };
    assert_eq!(read("1"), read("3"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = zero_density();
    v["budgett"] = json!({});
    let cfg = write_config(dir.path(), "cfg.json", &v);
    let res = trapsim(&["run", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("unknown field `budgett`"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_value_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = zero_density();
    v["model"]["kappa"] = json!(-2.0);
    let cfg = write_config(dir.path(), "cfg.json", &v);
    let res = trapsim(&["run", &cfg]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("`model.kappa`"));
}

#[test]
fn failed_check_exits_two_unless_acceptance_is_off() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_grid();
    v["tolerances"] = json!({"z": 1e-9});
    let cfg = write_config(dir.path(), "cfg.json", &v);
    let res = trapsim(&["run", &cfg, "--out", dir.path().join("a").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stdout).contains("[FAIL]"));
    v["acceptance"] = json!(false);
    let cfg = write_config(dir.path(), "cfg.json", &v);
    let res = trapsim(&["run", &cfg, "--out", dir.path().join("b").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
}

#[test]
fn pam_crosscheck_example_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "schema_version": 1,
        "kind": "pam-crosscheck",
        "model": {"d": 1, "gamma": 1.0, "kappa": 1.0, "rho": 1.0, "nu": 0.5},
        "t_grid": [5.0],
        "seed": 1,
        "estimators": [
            {"estimator": "pam", "n_outer": 1000},
            {"estimator": "direct", "n_outer": 20000, "n_inner": 1}
        ]
    });
    let path = write_config(dir.path(), "pam.json", &cfg);
    let res = trapsim(&["run", &path, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
}

#[test]
fn output_dir_from_config_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = zero_density();
    v["output_dir"] = json!(dir.path().join("from-config"));
    let cfg = write_config(dir.path(), "cfg.json", &v);
    let res = Command::new(env!("CARGO_BIN_EXE_trapsim"))
        .args(["run", &cfg])
        .env("TRAPSIM_OUT_DIR", dir.path().join("from-env"))
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    assert!(dir.path().join("from-config/manifest.json").exists());

    let cfg = write_config(dir.path(), "cfg2.json", &zero_density());
    let res = Command::new(env!("CARGO_BIN_EXE_trapsim"))
        .args(["run", &cfg])
        .env("TRAPSIM_OUT_DIR", dir.path().join("from-env"))
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    assert!(dir.path().join("from-env/results.csv").exists());
}

#[test]
fn builtin_run_and_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let res = trapsim(&["run", "builtin:c08-immobile-exponent", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let fits: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fits.json")).unwrap()).unwrap();
    assert_eq!(fits[0]["type"], json!("dv"));
    assert!(fits[0]["report"]["fit"]["exponent"].as_f64().unwrap() < 0.5);

    let res = trapsim(&["list"]);
    assert_eq!(res.status.code(), Some(0));
    let list: Value = serde_json::from_slice(&res.stdout).unwrap();
    let list = list.as_array().unwrap();
    for c in 1..=12 {
        assert!(list.iter().any(|e| e["criterion"] == json!(c)), "criterion {c}");
    }
    assert!(list.iter().all(|e| e["runner"] == json!("test-suite") || e["config"].is_object()));

    let res = trapsim(&["run", "builtin:c01-torus-oracle"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn version_prints_schema() {
    let res = trapsim(&["version"]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains(env!("CARGO_PKG_VERSION")) && text.contains("schema 1"), "{text}");
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        trapsim_cli::config::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 2);
}
