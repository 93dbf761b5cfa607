//! Executes one experiment configuration.

use serde::Serialize;
use thiserror::Error;

use trapsim::asymptotics::{
    annealed_lower_bound, dv_exponent_check, fit_estimates, quenched_rate, DvReport, DvRoute, QuenchedRateReport,
    QuenchedRoute, RateFit, RateModel, RatePoint,
};
use trapsim::pam::{annealed_pam_average, Boundary, IntegratorConfig, Scheme};
use trapsim::parallel::derive_seed;
use trapsim::pathmeasure::{
    fluctuation_report, median_growth, sample_gibbs_ensemble_with_bank, tune_proposal, FluctuationReport, Proposal,
};
use trapsim::survival::{
    annealed_direct, annealed_pde, annealed_range, annealed_softrange, pascal_reference, EstimatorTag, PdeOptions,
    SurvivalEstimate, YBank,
};
use trapsim::{Error, JumpKernel, KillRate, ModelParams};

use crate::config::{EstimatorSpec, ExperimentConfig, ExperimentKind};

/// Lower window coefficient of the fluctuation report.
pub const GIBBS_ALPHA: f64 = 0.1;
/// Proposals tried per horizon by `gibbs-fluctuation`.
pub const GIBBS_CANDIDATES: [Proposal; 4] = [
    Proposal::Free,
    Proposal::Confined { theta: 0.005 },
    Proposal::Confined { theta: 0.01 },
    Proposal::Confined { theta: 0.02 },
];

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{point}: {source}")]
    Estimator {
        point: String,
        #[source]
        source: Error,
    },
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub kind: &'static str,
    pub estimator: String,
    pub d: usize,
    pub gamma: String,
    pub kappa: f64,
    pub rho: f64,
    pub nu: f64,
    pub t: f64,
    pub seed: u64,
    pub field_seed: Option<u64>,
    pub value: f64,
    pub se: f64,
    pub log_value: f64,
    pub log_se: f64,
    pub n: usize,
}

impl Row {
    fn from_estimate(kind: ExperimentKind, e: &SurvivalEstimate, field_seed: Option<u64>) -> Self {
        Row {
            kind: kind.as_str(),
            estimator: e.estimator.as_str().to_string(),
            d: e.params.d,
            gamma: e.params.gamma.to_string(),
            kappa: e.params.kappa,
            rho: e.params.rho,
            nu: e.params.nu,
            t: e.t,
            seed: e.seed,
            field_seed,
            value: e.value,
            se: e.std_error,
            log_value: e.log_value,
            log_se: e.log_std_error,
            n: e.n_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Fitted summaries written to `fits.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum FitRecord {
    Rate {
        estimator: EstimatorTag,
        fit: RateFit,
        reference_coefficient: Option<f64>,
    },
    Dv {
        route: DvRoute,
        report: DvReport,
    },
    Gibbs {
        proposals: Vec<Proposal>,
        reports: Vec<FluctuationReport>,
        growth_exponent: f64,
        local_slopes: Vec<f64>,
    },
    Quenched {
        field_seed: u64,
        route: QuenchedRoute,
        rate: f64,
        rate_se: f64,
        upper_bound: f64,
        within_bounds: bool,
        fit: RateFit,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Outcome {
    pub rows: Vec<Row>,
    pub fits: Vec<FitRecord>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn point(cfg: &ExperimentConfig, what: &str, t: f64) -> String {
    let m = &cfg.model;
    format!(
        "{what} at t={t} (d={}, gamma={}, kappa={}, rho={}, nu={})",
        m.d, m.gamma, m.kappa, m.rho, m.nu
    )
}

fn at<T>(cfg: &ExperimentConfig, what: &str, t: f64, r: trapsim::Result<T>) -> Result<T, RunError> {
    r.map_err(|source| RunError::Estimator {
        point: point(cfg, what, t),
        source,
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let params = at(cfg, "model", 0.0, cfg.model.params())?;
    match cfg.kind {
        ExperimentKind::SurvivalGrid | ExperimentKind::PamCrosscheck => run_grid(cfg, &params),
        ExperimentKind::RateFit => run_rate_fit(cfg, &params),
        ExperimentKind::DvCheck => run_dv(cfg),
        ExperimentKind::GibbsFluctuation => run_gibbs(cfg, &params),
        ExperimentKind::PascalSuite => run_pascal(cfg, &params),
        ExperimentKind::QuenchedRate => run_quenched(cfg, &params),
    }
}

fn estimate(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    spec: &EstimatorSpec,
    t: f64,
    seed: u64,
) -> Result<SurvivalEstimate, RunError> {
    let (n_outer, n_inner) = spec.budget(&cfg.budget);
    let dt = cfg.pde_dt.unwrap_or(PdeOptions::default().dt);
    let r = match spec.estimator {
        EstimatorTag::Direct => annealed_direct(params, t, n_outer, n_inner, seed),
        EstimatorTag::Range => annealed_range(params, t, n_outer, n_inner, seed),
        EstimatorTag::SoftRange => annealed_softrange(params, t, n_outer, n_inner, seed),
        EstimatorTag::Pde => {
            let opts = PdeOptions { dt, ..PdeOptions::default() };
            annealed_pde(params, t, n_outer, &opts, seed)
        }
        EstimatorTag::PascalRef => pascal_reference(params, t, n_outer, seed),
        EstimatorTag::Pam => IntegratorConfig::new(dt, Scheme::Rk4, 1, Boundary::DirichletOne)
            .and_then(|icfg| annealed_pam_average(params, t, n_outer, &icfg, seed)),
        EstimatorTag::Quenched => Err(Error::Unsupported("quenched estimates need a field".into())),
    };
    at(cfg, spec.estimator.as_str(), t, r)
}

/// Every estimator at every horizon, seeded by position in the grid.
fn grid_estimates(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    specs: &[EstimatorSpec],
) -> Result<Vec<Vec<SurvivalEstimate>>, RunError> {
    cfg.t_grid
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            specs
                .iter()
                .enumerate()
                .map(|(ei, spec)| estimate(cfg, params, spec, t, derive_seed(cfg.seed, ((ti as u64) << 8) | ei as u64)))
                .collect()
        })
        .collect()
}

fn z_check(a: &SurvivalEstimate, b: &SurvivalEstimate, tol: f64) -> (bool, f64) {
    let diff = (a.value - b.value).abs();
    if a.combined_se(b) == 0.0 {
        return (diff <= 1e-12, if diff <= 1e-12 { 0.0 } else { f64::INFINITY });
    }
    let z = a.z_score(b);
    (z <= tol, z)
}

/// Agreement between every pair of estimators of `Z_t`; the Pascal
/// reference bounds them instead.
fn pairwise_checks(cfg: &ExperimentConfig, by_t: &[Vec<SurvivalEstimate>], checks: &mut Vec<Check>) {
    for row in by_t {
        for i in 0..row.len() {
            for j in i + 1..row.len() {
                let (a, b) = (&row[i], &row[j]);
                if a.estimator == EstimatorTag::PascalRef || b.estimator == EstimatorTag::PascalRef {
                    continue;
                }
                let (ok, z) = z_check(a, b, cfg.tolerances.z);
                checks.push(Check::new(
                    format!("agreement {}/{} t={}", a.estimator.as_str(), b.estimator.as_str(), a.t),
                    ok,
                    format!(
                        "{:.6}±{:.6} vs {:.6}±{:.6}, |z| = {z:.2} (max {})",
                        a.value, a.std_error, b.value, b.std_error, cfg.tolerances.z
                    ),
                ));
            }
        }
    }
}

/// `log Z_{2t} ≥ 2 log Z_t` for every estimator and grid pair `(t, 2t)`.
fn doubling_checks(cfg: &ExperimentConfig, by_t: &[Vec<SurvivalEstimate>], checks: &mut Vec<Check>) {
    let grid = &cfg.t_grid;
    for (i, &t) in grid.iter().enumerate() {
        let Some(j) = grid.iter().position(|&s| (s - 2.0 * t).abs() <= 1e-9 * t) else {
            continue;
        };
        for (a, b) in by_t[i].iter().zip(&by_t[j]) {
            let gap = b.log_value - 2.0 * a.log_value;
            let se = (b.log_std_error.powi(2) + 4.0 * a.log_std_error.powi(2)).sqrt();
            let ok = if se > 0.0 { gap / se >= -cfg.tolerances.z } else { gap >= -1e-12 };
            checks.push(Check::new(
                format!("super-multiplicativity {} t={t}", a.estimator.as_str()),
                ok,
                format!("log Z_2t - 2 log Z_t = {gap:.6} (se {se:.6})"),
            ));
        }
    }
}

fn run_grid(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Outcome, RunError> {
    let specs = cfg.resolved_estimators();
    let by_t = grid_estimates(cfg, params, &specs)?;
    let mut out = Outcome::default();
    pairwise_checks(cfg, &by_t, &mut out.checks);
    pascal_checks(cfg, &by_t, &mut out.checks);
    if cfg.kind == ExperimentKind::SurvivalGrid {
        doubling_checks(cfg, &by_t, &mut out.checks);
    }
    out.rows = by_t.iter().flatten().map(|e| Row::from_estimate(cfg.kind, e, None)).collect();
    Ok(out)
}

/// Reference coefficient of the dimension's decay law, when one applies.
pub fn reference_coefficient(cfg: &ExperimentConfig, model: RateModel) -> Option<f64> {
    let m = &cfg.model;
    match (m.d, model) {
        (1, RateModel::Sqrt) => Some(m.nu * (8.0 * m.rho / std::f64::consts::PI).sqrt()),
        (2, RateModel::TOverLog) => Some(m.nu * std::f64::consts::PI * m.rho),
        (d, RateModel::Exponential) if d >= 3 => {
            let gamma = m.gamma.as_finite()?;
            annealed_lower_bound(d, m.nu, gamma, m.rho).ok()
        }
        _ => None,
    }
}

fn run_rate_fit(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Outcome, RunError> {
    let specs = cfg.resolved_estimators();
    let model = cfg.resolved_rate_model();
    let estimates: Vec<SurvivalEstimate> = grid_estimates(cfg, params, &specs)?.into_iter().flatten().collect();
    let fit = at(cfg, "rate fit", cfg.t_grid[0], fit_estimates(&estimates, model))?;
    let reference = reference_coefficient(cfg, model);
    let mut out = Outcome::default();
    if let Some(target) = reference {
        let ratio = fit.coefficient / target;
        let tol = &cfg.tolerances;
        let (name, ok, detail) = match cfg.model.d {
            1 => (
                "d=1 coefficient",
                (ratio - 1.0).abs() <= tol.coefficient_rel,
                format!("ratio {ratio:.4} within {} of 1", tol.coefficient_rel),
            ),
            2 => (
                "d=2 coefficient ratio",
                ratio > tol.ratio_range[0] && ratio < tol.ratio_range[1],
                format!("ratio {ratio:.4} in ({}, {})", tol.ratio_range[0], tol.ratio_range[1]),
            ),
            _ => (
                "exponential lower bound",
                fit.coefficient >= target - fit.coefficient_se,
                format!("rate {:.4}±{:.4} vs bound {target:.4}", fit.coefficient, fit.coefficient_se),
            ),
        };
        out.checks.push(Check::new(name, ok, detail));
    }
    out.rows = estimates.iter().map(|e| Row::from_estimate(cfg.kind, e, None)).collect();
    out.fits.push(FitRecord::Rate {
        estimator: specs[0].estimator,
        fit,
        reference_coefficient: reference,
    });
    Ok(out)
}

fn run_dv(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let m = &cfg.model;
    let p = cfg.bernoulli_p.expect("validated");
    let walker = at(cfg, "walker", 0.0, JumpKernel::simple(m.d, m.kappa))?;
    let route = if m.d == 1 {
        DvRoute::ExactRangeLaw
    } else {
        DvRoute::MonteCarlo { n: cfg.budget.n_outer }
    };
    let report = at(cfg, "dv check", cfg.t_grid[0], dv_exponent_check(&walker, p, &cfg.t_grid, route, cfg.seed))?;
    let mut out = Outcome::default();
    let (name, n) = match route {
        DvRoute::ExactRangeLaw => ("dv-exact", 0),
        DvRoute::MonteCarlo { n } => ("dv-mc", n),
    };
    out.rows = report.points.iter().map(|pt| dv_row(cfg, name, n, pt)).collect();
    let a = report.fit.exponent.unwrap_or(f64::NAN);
    out.checks.push(Check::new(
        "exponent",
        a < cfg.tolerances.exponent_max,
        format!("fitted {a:.4} < {}", cfg.tolerances.exponent_max),
    ));
    let local = &report.local_exponents;
    out.checks.push(Check::new(
        "local exponents decreasing",
        local.windows(2).all(|w| w[1] < w[0]),
        format!("{local:?}"),
    ));
    out.fits.push(FitRecord::Dv { route, report });
    Ok(out)
}

fn dv_row(cfg: &ExperimentConfig, name: &str, n: usize, pt: &RatePoint) -> Row {
    let m = &cfg.model;
    let value = (-pt.y).exp();
    Row {
        kind: cfg.kind.as_str(),
        estimator: name.to_string(),
        d: m.d,
        gamma: KillRate::Hard.to_string(),
        kappa: m.kappa,
        rho: 0.0,
        nu: cfg.bernoulli_p.unwrap_or(0.0),
        t: pt.t,
        seed: cfg.seed,
        field_seed: None,
        value,
        se: value * pt.se,
        log_value: -pt.y,
        log_se: pt.se,
        n,
    }
}

fn run_gibbs(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Outcome, RunError> {
    let mut out = Outcome::default();
    let mut reports = Vec::new();
    let mut proposals = Vec::new();
    let n = cfg.budget.n_outer;
    for (i, &t) in cfg.t_grid.iter().enumerate() {
        let bank = YBank::sample(&params.traps, t, cfg.budget.n_inner, derive_seed(cfg.seed, 3 * i as u64));
        let pilot = (n / 4).max(1);
        let (proposal, _) = at(
            cfg,
            "proposal tuning",
            t,
            tune_proposal(params, t, &GIBBS_CANDIDATES, pilot, &bank, derive_seed(cfg.seed, 3 * i as u64 + 1)),
        )?;
        let ens = match sample_gibbs_ensemble_with_bank(params, t, n, &bank, proposal, derive_seed(cfg.seed, 3 * i as u64 + 2)) {
            Err(Error::DegenerateEnsemble { n_eff, .. }) => {
                out.checks.push(Check::new(format!("n_eff t={t}"), false, format!("degenerate ensemble, n_eff {n_eff:.1}")));
                continue;
            }
            r => at(cfg, "gibbs ensemble", t, r)?,
        };
        let r = at(cfg, "fluctuation report", t, fluctuation_report(&ens, GIBBS_ALPHA, 0.0))?;
        out.checks.push(Check::new(
            format!("n_eff t={t}"),
            r.n_eff >= cfg.tolerances.n_eff_floor,
            format!("{:.1} >= {}", r.n_eff, cfg.tolerances.n_eff_floor),
        ));
        proposals.push(proposal);
        reports.push(r);
    }
    if reports.len() >= 2 {
        let (slope, local) = median_growth(&reports);
        out.checks.push(Check::new(
            "median growth",
            slope < cfg.tolerances.exponent_max,
            format!("exponent {slope:.4} < {}", cfg.tolerances.exponent_max),
        ));
        let lower: Vec<f64> = reports.iter().map(|r| r.lower_probability).collect();
        out.checks.push(Check::new(
            "lower window probability nonincreasing",
            lower.windows(2).all(|w| w[1] <= w[0]),
            format!("{lower:?}"),
        ));
        out.fits.push(FitRecord::Gibbs {
            proposals,
            reports,
            growth_exponent: slope,
            local_slopes: local,
        });
    }
    Ok(out)
}

/// Every annealed estimate stays below the Pascal reference at the same `t`.
fn pascal_checks(cfg: &ExperimentConfig, by_t: &[Vec<SurvivalEstimate>], checks: &mut Vec<Check>) {
    for row in by_t {
        let Some(p) = row.iter().find(|e| e.estimator == EstimatorTag::PascalRef) else {
            continue;
        };
        for e in row.iter().filter(|e| e.estimator != EstimatorTag::PascalRef) {
            let se = e.combined_se(p);
            checks.push(Check::new(
                format!("pascal bound {} t={}", e.estimator.as_str(), e.t),
                e.value <= p.value + cfg.tolerances.z * se,
                format!("{:.6}±{:.6} <= {:.6}±{:.6}", e.value, e.std_error, p.value, p.std_error),
            ));
        }
    }
}

fn run_pascal(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Outcome, RunError> {
    let mut specs = cfg.resolved_estimators();
    let reference = match specs.iter().position(|s| s.estimator == EstimatorTag::PascalRef) {
        Some(i) => specs.remove(i),
        None => EstimatorSpec::plain(EstimatorTag::PascalRef),
    };
    let mut all = vec![reference];
    all.extend(specs);
    let by_t = grid_estimates(cfg, params, &all)?;
    let mut out = Outcome::default();
    pascal_checks(cfg, &by_t, &mut out.checks);
    out.rows = by_t.iter().flatten().map(|e| Row::from_estimate(cfg.kind, e, None)).collect();
    Ok(out)
}

fn run_quenched(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Outcome, RunError> {
    let route = match cfg.model.gamma {
        KillRate::Finite(_) => QuenchedRoute::FeynmanKac {
            dt: cfg.pde_dt.unwrap_or(0.05),
        },
        KillRate::Hard => QuenchedRoute::MonteCarlo {
            walks_per_t: cfg.budget.n_outer,
        },
    };
    let mut out = Outcome::default();
    let mut reports: Vec<(u64, QuenchedRateReport)> = Vec::new();
    for &fs in &cfg.field_seeds {
        let r = at(
            cfg,
            &format!("quenched rate on field {fs}"),
            *cfg.t_grid.last().expect("nonempty grid"),
            quenched_rate(fs, params, &cfg.t_grid, route, derive_seed(cfg.seed, fs)),
        )?;
        out.checks.push(Check::new(
            format!("rate bounds field {fs}"),
            r.within_bounds,
            format!("{:.4}±{:.4} in (0, {}]", r.rate, r.rate_se, r.upper_bound),
        ));
        out.rows
            .extend(r.estimates.iter().map(|e| Row::from_estimate(cfg.kind, e, Some(fs))));
        reports.push((fs, r));
    }
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            let ((fa, a), (fb, b)) = (&reports[i], &reports[j]);
            let z = (a.rate - b.rate) / a.rate_se.hypot(b.rate_se);
            out.checks.push(Check::new(
                format!("fields {fa}/{fb} agree"),
                z.abs() <= cfg.tolerances.z,
                format!("|z| = {:.2}", z.abs()),
            ));
        }
    }
    out.fits.extend(reports.into_iter().map(|(field_seed, r)| FitRecord::Quenched {
        field_seed,
        route,
        rate: r.rate,
        rate_se: r.rate_se,
        upper_bound: r.upper_bound,
        within_bounds: r.within_bounds,
        fit: r.fit,
    }));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: serde_json::Value) -> ExperimentConfig {
        ExperimentConfig::from_json(&json.to_string()).unwrap()
    }

    #[test]
    fn zero_density_grid_is_exactly_one() {
        let c = cfg(serde_json::json!({
            "schema_version": 1, "kind": "survival-grid",
            "model": {"d": 1, "gamma": 1.0, "kappa": 1.0, "rho": 1.0, "nu": 0.0},
            "t_grid": [1.0, 2.0], "seed": 3, "budget": {"n_outer": 10, "n_inner": 2}
        }));
        let out = run(&c).unwrap();
        assert_eq!(out.rows.len(), 6);
        assert!(out.rows.iter().all(|r| r.value == 1.0 && r.se == 0.0));
        assert!(out.passed(), "{:?}", out.checks);
        assert!(out.checks.iter().any(|c| c.name.starts_with("super-multiplicativity")));
    }

    #[test]
    fn pascal_reference_bounds_instead_of_agreeing() {
        let c = cfg(serde_json::json!({
            "schema_version": 1, "kind": "survival-grid",
            "model": {"d": 1, "gamma": "inf", "kappa": 1.0, "rho": 1.0, "nu": 1.0},
            "t_grid": [1.0], "seed": 4,
            "estimators": [
                {"estimator": "direct", "n_outer": 2000, "n_inner": 1},
                {"estimator": "pascal-ref", "n_outer": 2000}
            ]
        }));
        let out = run(&c).unwrap();
        let names: Vec<&str> = out.checks.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["pascal bound direct t=1"]);
        assert!(out.passed(), "{:?}", out.checks);
    }

    #[test]
    fn dv_check_on_exact_route() {
        let c = cfg(serde_json::json!({
            "schema_version": 1, "kind": "dv-check",
            "model": {"d": 1, "gamma": "inf", "kappa": 1.0, "rho": 0.0, "nu": 0.0},
            "t_grid": [100.0, 1000.0, 10000.0], "seed": 0, "bernoulli_p": 0.5
        }));
        let out = run(&c).unwrap();
        assert!(out.passed(), "{:?}", out.checks);
        assert_eq!(out.rows.len(), 3);
        assert!(out.rows.windows(2).all(|w| w[1].value < w[0].value));
    }

    #[test]
    fn reference_coefficients() {
        let mut c = cfg(serde_json::json!({
            "schema_version": 1, "kind": "rate-fit",
            "model": {"d": 1, "gamma": "inf", "kappa": 0.0, "rho": 2.0, "nu": 0.5},
            "t_grid": [1.0, 2.0, 4.0], "seed": 0
        }));
        let want = 0.5 * (16.0 / std::f64::consts::PI).sqrt();
        assert!((reference_coefficient(&c, RateModel::Sqrt).unwrap() - want).abs() < 1e-12);
        assert_eq!(reference_coefficient(&c, RateModel::Power), None);
        c.model.d = 3;
        assert_eq!(reference_coefficient(&c, RateModel::Exponential), None);
    }

    #[test]
    fn failing_point_is_named() {
        let c = cfg(serde_json::json!({
            "schema_version": 1, "kind": "quenched-rate",
            "model": {"d": 1, "gamma": 1.0, "kappa": 1.0, "rho": 1.0, "nu": 1.0},
            "t_grid": [1.0, 2.0, 3.0], "seed": 0, "field_seeds": [1], "pde_dt": 5.0
        }));
        let err = run(&c).unwrap_err().to_string();
        assert!(err.contains("quenched rate on field 1 at t=3"), "{err}");
    }
}
