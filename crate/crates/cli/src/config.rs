//! Versioned JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use trapsim::asymptotics::RateModel;
use trapsim::survival::EstimatorTag;
use trapsim::{KillRate, ModelParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SurvivalGrid,
    RateFit,
    DvCheck,
    GibbsFluctuation,
    PamCrosscheck,
    PascalSuite,
    QuenchedRate,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::SurvivalGrid => "survival-grid",
            ExperimentKind::RateFit => "rate-fit",
            ExperimentKind::DvCheck => "dv-check",
            ExperimentKind::GibbsFluctuation => "gibbs-fluctuation",
            ExperimentKind::PamCrosscheck => "pam-crosscheck",
            ExperimentKind::PascalSuite => "pascal-suite",
            ExperimentKind::QuenchedRate => "quenched-rate",
        }
    }
}

/// Simple symmetric walker and traps on Z^d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    /// A nonnegative number or `"inf"`.
    pub gamma: KillRate,
    pub kappa: f64,
    pub rho: f64,
    pub nu: f64,
}

impl ModelConfig {
    pub fn params(&self) -> trapsim::Result<ModelParams> {
        ModelParams::simple(self.d, self.gamma, self.kappa, self.rho, self.nu)
    }
}

/// Default sample sizes; the meaning of each number depends on the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    #[serde(default = "Budget::default_outer")]
    pub n_outer: usize,
    #[serde(default = "Budget::default_inner")]
    pub n_inner: usize,
}

impl Budget {
    fn default_outer() -> usize {
        10_000
    }

    fn default_inner() -> usize {
        200
    }
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            n_outer: Self::default_outer(),
            n_inner: Self::default_inner(),
        }
    }
}

/// One estimator with optional budget overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub estimator: EstimatorTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_outer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_inner: Option<usize>,
}

impl EstimatorSpec {
    pub fn plain(estimator: EstimatorTag) -> Self {
        Self {
            estimator,
            n_outer: None,
            n_inner: None,
        }
    }

    pub fn with_budget(estimator: EstimatorTag, n_outer: usize, n_inner: usize) -> Self {
        Self {
            estimator,
            n_outer: Some(n_outer),
            n_inner: Some(n_inner),
        }
    }

    pub fn budget(&self, default: &Budget) -> (usize, usize) {
        (
            self.n_outer.unwrap_or(default.n_outer),
            self.n_inner.unwrap_or(default.n_inner),
        )
    }
}

/// Acceptance tolerances; every field has a default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Largest accepted |z| between estimates.
    pub z: f64,
    /// Smallest accepted effective sample size of a Gibbs ensemble.
    pub n_eff_floor: f64,
    /// Largest accepted relative deviation of a d = 1 coefficient.
    pub coefficient_rel: f64,
    /// Accepted open interval for the d = 2 coefficient ratio.
    pub ratio_range: [f64; 2],
    /// Fitted exponents must stay below this value.
    pub exponent_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            z: 3.0,
            n_eff_floor: 50.0,
            coefficient_rel: 0.15,
            ratio_range: [0.3, 1.7],
            exponent_max: 0.5,
        }
    }
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub model: ModelConfig,
    pub t_grid: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub budget: Budget,
    /// Estimators to run; an empty list selects the defaults of the kind.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_model: Option<RateModel>,
    /// Site-occupation probability of the immobile Bernoulli traps
    /// (`dv-check`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bernoulli_p: Option<f64>,
    /// Field realizations for `quenched-rate`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub field_seeds: Vec<u64>,
    /// Time step of the PDE-based routes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde_dt: Option<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// When false, failed checks are reported but do not change the exit
    /// status.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub acceptance: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Estimators to run, with the defaults of the kind filled in.
    pub fn resolved_estimators(&self) -> Vec<EstimatorSpec> {
        if !self.estimators.is_empty() {
            return self.estimators.clone();
        }
        let inner = match self.model.gamma {
            KillRate::Hard => EstimatorTag::Range,
            KillRate::Finite(_) => EstimatorTag::SoftRange,
        };
        let tags: Vec<EstimatorTag> = match self.kind {
            ExperimentKind::SurvivalGrid | ExperimentKind::PascalSuite => match self.model.gamma {
                KillRate::Hard => vec![EstimatorTag::Direct, EstimatorTag::Range],
                KillRate::Finite(_) => vec![EstimatorTag::Direct, EstimatorTag::SoftRange, EstimatorTag::Pde],
            },
            ExperimentKind::RateFit if self.model.kappa == 0.0 => vec![EstimatorTag::PascalRef],
            ExperimentKind::RateFit => vec![inner],
            ExperimentKind::PamCrosscheck => vec![EstimatorTag::Pam, EstimatorTag::Direct],
            _ => Vec::new(),
        };
        tags.into_iter().map(EstimatorSpec::plain).collect()
    }

    /// Decay law fitted by `rate-fit`, defaulting to the law of the dimension.
    pub fn resolved_rate_model(&self) -> RateModel {
        self.rate_model.unwrap_or(match self.model.d {
            1 => RateModel::Sqrt,
            2 => RateModel::TOverLog,
            _ => RateModel::Exponential,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let m = &self.model;
        if !(1..=4).contains(&m.d) {
            return Err(invalid("model.d", format!("{} not in 1..=4", m.d)));
        }
        for (name, v) in [("model.kappa", m.kappa), ("model.rho", m.rho), ("model.nu", m.nu)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("{v} must be finite and >= 0")));
            }
        }
        let traps_required = !matches!(self.kind, ExperimentKind::SurvivalGrid | ExperimentKind::DvCheck);
        if traps_required && m.nu <= 0.0 {
            return Err(invalid("model.nu", format!("must be > 0 for {}", self.kind.as_str())));
        }
        if self.t_grid.is_empty() {
            return Err(invalid("t_grid", "must not be empty"));
        }
        if let Some(t) = self.t_grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(invalid("t_grid", format!("{t} must be finite and > 0")));
        }
        if self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("t_grid", "must be strictly increasing"));
        }
        if self.budget.n_outer == 0 || self.budget.n_inner == 0 {
            return Err(invalid("budget", "sample sizes must be >= 1"));
        }
        if let Some(dt) = self.pde_dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(invalid("pde_dt", format!("{dt} must be finite and > 0")));
            }
        }
        let tol = &self.tolerances;
        if !(tol.z > 0.0 && tol.coefficient_rel > 0.0 && tol.ratio_range[0] < tol.ratio_range[1]) {
            return Err(invalid("tolerances", "must be positive with an ordered ratio range"));
        }
        for (i, spec) in self.estimators.iter().enumerate() {
            let field = format!("estimators[{i}]");
            if spec.n_outer == Some(0) || spec.n_inner == Some(0) {
                return Err(invalid(field, "sample sizes must be >= 1"));
            }
            check_estimator(spec.estimator, m.gamma).map_err(|reason| invalid(field, reason))?;
        }
        self.validate_kind()
    }

    fn validate_kind(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        match self.kind {
            ExperimentKind::SurvivalGrid | ExperimentKind::PascalSuite => {
                if self.estimators.iter().any(|s| s.estimator == EstimatorTag::Quenched) {
                    return Err(invalid("estimators", "quenched estimates belong to the quenched-rate kind"));
                }
            }
            ExperimentKind::RateFit => {
                if self.t_grid.len() < 3 {
                    return Err(invalid("t_grid", "rate fits need at least 3 points"));
                }
                if self.resolved_estimators().len() != 1 {
                    return Err(invalid("estimators", "rate-fit takes exactly one estimator"));
                }
            }
            ExperimentKind::DvCheck => {
                match self.bernoulli_p {
                    Some(p) if p > 0.0 && p < 1.0 => {}
                    Some(p) => return Err(invalid("bernoulli_p", format!("{p} not in (0, 1)"))),
                    None => return Err(invalid("bernoulli_p", "required for dv-check")),
                }
                if self.t_grid.len() < 3 {
                    return Err(invalid("t_grid", "the exponent fit needs at least 3 points"));
                }
            }
            ExperimentKind::GibbsFluctuation => {
                if m.d != 1 {
                    return Err(invalid("model.d", "gibbs-fluctuation is one-dimensional"));
                }
                if self.t_grid.len() < 2 {
                    return Err(invalid("t_grid", "growth needs at least 2 points"));
                }
            }
            ExperimentKind::PamCrosscheck => {
                if m.gamma.is_hard() {
                    return Err(invalid("model.gamma", "pam-crosscheck needs a finite gamma"));
                }
            }
            ExperimentKind::QuenchedRate => {
                if self.field_seeds.is_empty() {
                    return Err(invalid("field_seeds", "need at least one field seed"));
                }
                if self.t_grid.len() < 3 {
                    return Err(invalid("t_grid", "rate fits need at least 3 points"));
                }
            }
        }
        Ok(())
    }
}

fn check_estimator(tag: EstimatorTag, gamma: KillRate) -> Result<(), String> {
    match (tag, gamma) {
        (EstimatorTag::Range, KillRate::Finite(_)) => Err("range needs gamma = \"inf\"".into()),
        (EstimatorTag::SoftRange | EstimatorTag::Pde | EstimatorTag::Pam, KillRate::Hard) => {
            Err(format!("{} needs a finite gamma", tag.as_str()))
        }
        (EstimatorTag::Quenched, _) => Err("quenched estimates belong to the quenched-rate kind".into()),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "kind": "survival-grid",
            "model": {"d": 1, "gamma": "inf", "kappa": 1.0, "rho": 1.0, "nu": 1.0},
            "t_grid": [1.0, 2.0],
            "seed": 7
        })
    }

    fn parse(v: serde_json::Value) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_json(&v.to_string())
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = parse(base()).unwrap();
        assert_eq!(cfg.model.gamma, KillRate::Hard);
        assert_eq!(cfg.budget, Budget::default());
        assert!(cfg.acceptance);
        let tags: Vec<_> = cfg.resolved_estimators().iter().map(|s| s.estimator).collect();
        assert_eq!(tags, vec![EstimatorTag::Direct, EstimatorTag::Range]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = base();
        v["sed"] = serde_json::json!(1);
        let err = parse(v).unwrap_err().to_string();
        assert!(err.contains("unknown field `sed`"), "{err}");
        let mut v = base();
        v["model"]["kapa"] = serde_json::json!(1.0);
        assert!(parse(v).unwrap_err().to_string().contains("kapa"));
    }

    #[test]
    fn seed_and_version_are_mandatory() {
        let mut v = base();
        v.as_object_mut().unwrap().remove("seed");
        assert!(parse(v).unwrap_err().to_string().contains("seed"));
        let mut v = base();
        v["schema_version"] = serde_json::json!(2);
        assert!(parse(v).unwrap_err().to_string().contains("schema_version"));
    }

    #[test]
    fn field_level_messages() {
        let mut v = base();
        v["t_grid"] = serde_json::json!([2.0, 1.0]);
        assert!(parse(v).unwrap_err().to_string().contains("`t_grid`"));
        let mut v = base();
        v["model"]["rho"] = serde_json::json!(-1.0);
        assert!(parse(v).unwrap_err().to_string().contains("`model.rho`"));
        let mut v = base();
        v["estimators"] = serde_json::json!([{"estimator": "softrange"}]);
        assert!(parse(v).unwrap_err().to_string().contains("`estimators[0]`"));
        let mut v = base();
        v["model"]["gamma"] = serde_json::json!("infinity");
        assert!(parse(v).unwrap_err().to_string().contains("inf"));
    }

    #[test]
    fn kind_specific_requirements() {
        let mut v = base();
        v["kind"] = serde_json::json!("dv-check");
        v["t_grid"] = serde_json::json!([10.0, 100.0, 1000.0]);
        assert!(parse(v.clone()).unwrap_err().to_string().contains("bernoulli_p"));
        v["bernoulli_p"] = serde_json::json!(0.5);
        parse(v).unwrap();
        let mut v = base();
        v["kind"] = serde_json::json!("pascal-suite");
        v["model"]["nu"] = serde_json::json!(0.0);
        assert!(parse(v).unwrap_err().to_string().contains("model.nu"));
    }

    #[test]
    fn round_trip() {
        let cfg = parse(base()).unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
