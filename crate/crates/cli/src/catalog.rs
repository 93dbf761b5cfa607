//! Built-in experiments, one or more per acceptance criterion.

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Runner {
    /// `trapsim run builtin:<id>`.
    Cli,
    /// Only covered by the acceptance test suite.
    TestSuite,
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalogEntry {
    pub id: &'static str,
    pub criterion: u8,
    pub title: &'static str,
    pub runner: Runner,
    /// Name of the acceptance test covering the criterion.
    pub test: &'static str,
    /// Single-core wall time in seconds, rounded up.
    pub expected_runtime_s: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
}

fn model(d: usize, gamma: Value, kappa: f64, rho: f64, nu: f64) -> Value {
    json!({"d": d, "gamma": gamma, "kappa": kappa, "rho": rho, "nu": nu})
}

fn config(mut v: Value) -> Option<ExperimentConfig> {
    v["schema_version"] = json!(crate::config::SCHEMA_VERSION);
    Some(serde_json::from_value(v).expect("builtin configs parse"))
}

pub fn catalog() -> Vec<CatalogEntry> {
    let entry = |id, criterion, title, test, expected_runtime_s, config: Option<ExperimentConfig>| CatalogEntry {
        id,
        criterion,
        title,
        runner: if config.is_some() { Runner::Cli } else { Runner::TestSuite },
        test,
        expected_runtime_s,
        config,
    };
    vec![
        entry("c01-torus-oracle", 1, "exact torus oracle", "c01_exact_torus_oracle", 2, None),
        entry(
            "c02-hard",
            2,
            "cross-estimator consistency, hard traps",
            "c02_four_way_consistency",
            11,
            config(json!({
                "kind": "survival-grid",
                "model": model(1, json!("inf"), 1.0, 1.0, 1.0),
                "t_grid": [1.0, 2.0, 4.0, 8.0],
                "seed": 0xC2,
                "estimators": [
                    {"estimator": "direct", "n_outer": 50000, "n_inner": 1},
                    {"estimator": "range", "n_outer": 4000, "n_inner": 400}
                ]
            })),
        ),
        entry(
            "c02-soft",
            2,
            "cross-estimator consistency, soft traps",
            "c02_four_way_consistency",
            13,
            config(json!({
                "kind": "survival-grid",
                "model": model(1, json!(1.0), 1.0, 1.0, 1.0),
                "t_grid": [1.0, 2.0, 4.0, 8.0],
                "seed": 0xC2,
                "estimators": [
                    {"estimator": "direct", "n_outer": 50000, "n_inner": 1},
                    {"estimator": "softrange", "n_outer": 4000, "n_inner": 400},
                    {"estimator": "pde", "n_outer": 1500}
                ]
            })),
        ),
        entry(
            "c03-pascal",
            3,
            "Pascal principle",
            "c03_pascal_principle",
            2,
            config(json!({
                "kind": "pascal-suite",
                "model": model(1, json!(1.0), 1.0, 1.0, 1.0),
                "t_grid": [1.0, 2.0, 4.0, 8.0],
                "seed": 0xC3,
                "estimators": [
                    {"estimator": "pascal-ref", "n_outer": 20000},
                    {"estimator": "direct", "n_outer": 10000, "n_inner": 1},
                    {"estimator": "softrange", "n_outer": 1000, "n_inner": 200}
                ]
            })),
        ),
        entry(
            "c04-d1-coefficient",
            4,
            "d=1 annealed coefficient",
            "c04_one_dimensional_coefficient",
            4,
            config(json!({
                "kind": "rate-fit",
                "model": model(1, json!("inf"), 0.0, 1.0, 1.0),
                "t_grid": [25.0, 100.0, 400.0],
                "seed": 40,
                "estimators": [{"estimator": "pascal-ref", "n_outer": 200000}],
                "rate_model": "sqrt"
            })),
        ),
        entry(
            "c05-d2-shape",
            5,
            "d=2 law shape",
            "c05_two_dimensional_shape",
            1,
            config(json!({
                "kind": "rate-fit",
                "model": model(2, json!("inf"), 0.0, 1.0, 1.0),
                "t_grid": [25.0, 100.0, 400.0],
                "seed": 50,
                "estimators": [{"estimator": "pascal-ref", "n_outer": 4000}],
                "rate_model": "t_over_log"
            })),
        ),
        entry(
            "c06-d3-bound",
            6,
            "d=3 exponential bound",
            "c06_three_dimensional_bound",
            1,
            config(json!({
                "kind": "rate-fit",
                "model": model(3, json!(1.0), 1.0, 1.0, 1.0),
                "t_grid": [2.0, 4.0, 8.0],
                "seed": 62,
                "estimators": [{"estimator": "softrange", "n_outer": 1000, "n_inner": 200}],
                "rate_model": "exponential"
            })),
        ),
        entry(
            "c07-super-multiplicativity",
            7,
            "super-multiplicativity",
            "c07_super_multiplicativity",
            3,
            config(json!({
                "kind": "survival-grid",
                "model": model(1, json!("inf"), 1.0, 1.0, 1.0),
                "t_grid": [1.0, 2.0, 4.0, 8.0],
                "seed": 70,
                "estimators": [{"estimator": "range", "n_outer": 4000, "n_inner": 400}]
            })),
        ),
        entry(
            "c08-immobile-exponent",
            8,
            "immobile-trap exponent",
            "c08_immobile_exponent",
            1,
            config(json!({
                "kind": "dv-check",
                "model": model(1, json!("inf"), 1.0, 0.0, 0.0),
                "t_grid": [100.0, 1000.0, 10000.0],
                "seed": 0,
                "bernoulli_p": 0.5
            })),
        ),
        entry(
            "c09-subdiffusivity",
            9,
            "sub-diffusivity trend",
            "c09_subdiffusivity_trend",
            29,
            config(json!({
                "kind": "gibbs-fluctuation",
                "model": model(1, json!("inf"), 1.0, 1.0, 1.0),
                "t_grid": [64.0, 256.0, 1024.0],
                "seed": 90,
                "budget": {"n_outer": 2000, "n_inner": 400}
            })),
        ),
        entry("c10-exponential-moments", 10, "exponential moments", "c10_exponential_moments", 3, None),
        entry(
            "c11-pam-average",
            11,
            "PAM average against direct sampling",
            "c11_pam_identities",
            2,
            config(json!({
                "kind": "pam-crosscheck",
                "model": model(1, json!(1.0), 1.0, 1.0, 1.0),
                "t_grid": [2.0],
                "seed": 113,
                "estimators": [
                    {"estimator": "pam", "n_outer": 4000},
                    {"estimator": "direct", "n_outer": 50000, "n_inner": 1}
                ]
            })),
        ),
        entry(
            "c11-pam-small",
            11,
            "PAM average, small example",
            "c11_pam_identities",
            1,
            config(json!({
                "kind": "pam-crosscheck",
                "model": model(1, json!(1.0), 1.0, 1.0, 0.5),
                "t_grid": [5.0],
                "seed": 1,
                "estimators": [
                    {"estimator": "pam", "n_outer": 1000},
                    {"estimator": "direct", "n_outer": 20000, "n_inner": 1}
                ]
            })),
        ),
        entry(
            "c12-quenched-rate",
            12,
            "quenched rate bounds",
            "c12_quenched_bounds",
            16,
            config(json!({
                "kind": "quenched-rate",
                "model": model(1, json!(1.0), 1.0, 1.0, 1.0),
                "t_grid": [128.0, 256.0, 384.0, 512.0, 640.0, 768.0, 896.0, 1024.0],
                "seed": 0,
                "field_seeds": [1, 2],
                "pde_dt": 0.05
            })),
        ),
    ]
}

pub fn find(id: &str) -> Option<CatalogEntry> {
    catalog().into_iter().find(|e| e.id == id)
}
