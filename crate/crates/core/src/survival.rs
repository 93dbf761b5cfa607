//! Survival-probability estimators.
//!
//! Every estimator returns a [`SurvivalEstimate`] carrying the value, its
//! log, standard errors in both domains, the sample count, a parameter echo
//! and the seed. The annealed quantity has four independent routes (direct
//! double Monte Carlo, range, soft range, PDE) which are meant to be checked
//! against each other.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KillRate, ModelParams, ParamEcho};
use crate::pam::{solve_v_x, Boundary, IntegratorConfig, Scheme};
use crate::parallel::{derive_seed, map_reduce, SimRng, DEFAULT_CHUNKS};
use crate::stats::{LogMeanExp, MeanVar};
use crate::trapfield::{truncation_radius, walk_reach, TrapField, TrapFieldSpec};
use crate::walk::{
    difference_range_size, for_each_difference_local_time, JumpKernel, PairScratch, Site, WalkPath,
};

/// Which representation produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorTag {
    Direct,
    Range,
    #[serde(rename = "softrange")]
    SoftRange,
    Pde,
    PascalRef,
    Quenched,
    Pam,
}

impl EstimatorTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorTag::Direct => "direct",
            EstimatorTag::Range => "range",
            EstimatorTag::SoftRange => "softrange",
            EstimatorTag::Pde => "pde",
            EstimatorTag::PascalRef => "pascal-ref",
            EstimatorTag::Quenched => "quenched",
            EstimatorTag::Pam => "pam",
        }
    }
}

impl std::fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Estimator-specific side information.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Second-order upward bias `≈ E[Z^X ν² Var(Ê_X) / 2]` of the plug-in
    /// inner estimate (range and soft-range routes).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jensen_correction: Option<f64>,
    /// Variance of the per-field means attributable to the fields.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub between_variance: Option<f64>,
    /// Mean within-field variance of the per-field means.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub within_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_inner: Option<usize>,
    /// Largest `|Σ_X + γ∫v|` seen along the PDE route.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_identity_residual: Option<f64>,
}

/// Monte Carlo estimate of a survival probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub estimator: EstimatorTag,
    pub value: f64,
    pub log_value: f64,
    pub std_error: f64,
    /// Delta-method standard error of `log_value`.
    pub log_std_error: f64,
    pub n_samples: usize,
    pub params: ParamEcho,
    pub t: f64,
    pub seed: u64,
    pub diagnostics: Diagnostics,
}

impl SurvivalEstimate {
    /// The value 1 with zero error (no traps, no killing, or no time).
    pub fn exact_one(tag: EstimatorTag, params: &ModelParams, t: f64, n: usize, seed: u64) -> Self {
        Self::exact_one_echo(tag, params.echo(), t, n, seed)
    }

    fn exact_one_echo(tag: EstimatorTag, params: ParamEcho, t: f64, n: usize, seed: u64) -> Self {
        Self {
            estimator: tag,
            value: 1.0,
            log_value: 0.0,
            std_error: 0.0,
            log_std_error: 0.0,
            n_samples: n,
            params,
            t,
            seed,
            diagnostics: Diagnostics::default(),
        }
    }

    /// Estimate from a plain sample mean of survival weights.
    pub fn from_mean_var(tag: EstimatorTag, params: &ModelParams, t: f64, acc: &MeanVar, seed: u64) -> Self {
        Self::from_mean_var_echo(tag, params.echo(), t, acc, seed)
    }

    fn from_mean_var_echo(tag: EstimatorTag, params: ParamEcho, t: f64, acc: &MeanVar, seed: u64) -> Self {
        let value = acc.mean.clamp(0.0, 1.0);
        let std_error = acc.std_error();
        let (log_value, log_std_error) = if value > 0.0 {
            (value.ln(), std_error / value)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        };
        Self {
            estimator: tag,
            value,
            log_value,
            std_error,
            log_std_error,
            n_samples: acc.n as usize,
            params,
            t,
            seed,
            diagnostics: Diagnostics::default(),
        }
    }

    /// Estimate from a mean of weights accumulated in log form.
    fn from_log_mean(tag: EstimatorTag, params: ParamEcho, t: f64, acc: &LogMeanExp, seed: u64) -> Self {
        let log_value = acc.log_mean().min(0.0);
        let log_std_error = if log_value.is_finite() {
            acc.rel_std_error()
        } else {
            f64::INFINITY
        };
        let value = log_value.exp();
        Self {
            estimator: tag,
            value,
            log_value,
            std_error: if log_value.is_finite() { value * log_std_error } else { 0.0 },
            log_std_error,
            n_samples: acc.count() as usize,
            params,
            t,
            seed,
            diagnostics: Diagnostics::default(),
        }
    }

    /// Estimate from a log value known with a given standard error.
    pub(crate) fn from_log(tag: EstimatorTag, params: ParamEcho, t: f64, log_value: f64, log_se: f64, n: usize, seed: u64) -> Self {
        let value = log_value.exp();
        Self {
            estimator: tag,
            value,
            log_value,
            std_error: value * log_se,
            log_std_error: log_se,
            n_samples: n,
            params,
            t,
            seed,
            diagnostics: Diagnostics::default(),
        }
    }

    /// `sqrt(se_a² + se_b²)` in the value domain.
    pub fn combined_se(&self, other: &SurvivalEstimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }

    /// `|a − b| / combined SE` (0 when both are exact and equal).
    pub fn z_score(&self, other: &SurvivalEstimate) -> f64 {
        let diff = (self.value - other.value).abs();
        let se = self.combined_se(other);
        if diff == 0.0 {
            0.0
        } else {
            diff / se
        }
    }

    /// Whether two estimates agree within `k` combined standard errors.
    pub fn agrees_with(&self, other: &SurvivalEstimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * self.combined_se(other)
    }

    /// Same comparison in the log domain.
    pub fn log_agrees_with(&self, other: &SurvivalEstimate, k: f64) -> bool {
        (self.log_value - other.log_value).abs() <= k * self.log_std_error.hypot(other.log_std_error)
    }
}

/// Error level for the walker reach used to size trap windows.
pub const REACH_EPSILON: f64 = 1e-12;
/// Error level for the trap-window truncation.
pub const FIELD_EPSILON: f64 = 1e-9;

/// Truncation settings for field-based estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOptions {
    pub reach_epsilon: f64,
    pub field_epsilon: f64,
    /// Window radius as a multiple of the certified minimum.
    pub radius_multiplier: i64,
}

impl Default for FieldOptions {
    fn default() -> Self {
        Self {
            reach_epsilon: REACH_EPSILON,
            field_epsilon: FIELD_EPSILON,
            radius_multiplier: 1,
        }
    }
}

impl FieldOptions {
    /// Certified field spec for the walker and trap laws of `params` up to `t`.
    pub fn field_spec(&self, params: &ModelParams, t: f64) -> Result<TrapFieldSpec> {
        let reach = walk_reach(&params.walker, t, self.reach_epsilon);
        let spec = TrapFieldSpec::new(params.traps.clone(), params.nu, t, reach, self.field_epsilon)?;
        if self.radius_multiplier > 1 {
            spec.with_radius(spec.radius() * self.radius_multiplier)
        } else {
            Ok(spec)
        }
    }
}

fn merge_results<A, F: FnMut(&mut A, &A)>(a: &mut Result<A>, b: Result<A>, mut f: F) {
    match (a.as_mut(), b) {
        (Ok(x), Ok(y)) => f(x, &y),
        (Ok(_), Err(e)) => *a = Err(e),
        (Err(_), _) => {}
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("{t} must be finite and >= 0")));
    }
    Ok(())
}

fn sample_walker(params_walker: &JumpKernel, t: f64, rng: &mut SimRng) -> WalkPath {
    WalkPath::sample(params_walker, Site::ORIGIN, t, rng)
}

/// Log survival weight of one walker path in a fixed field.
fn quenched_log_weight(field: &TrapField, gamma: KillRate, x: &WalkPath) -> Result<f64> {
    match gamma {
        KillRate::Hard => Ok(if field.is_hit(x)? { f64::NEG_INFINITY } else { 0.0 }),
        KillRate::Finite(g) => Ok(-g * field.interaction_integral(x)?.exposure),
    }
}

/// `Z^ξ_{γ,t}` for one fixed field by averaging over `n_walks` walker paths.
///
/// Walks that leave the field's certified walker reach are an error.
pub fn quenched_survival(
    field: &TrapField,
    gamma: KillRate,
    walker: &JumpKernel,
    t: f64,
    n_walks: usize,
    seed: u64,
) -> Result<SurvivalEstimate> {
    check_t(t)?;
    if n_walks == 0 {
        return Err(Error::EmptyBudget("n_walks"));
    }
    if t > field.spec().horizon() {
        return Err(Error::HorizonMismatch {
            a: field.spec().horizon(),
            b: t,
        });
    }
    if walker.dim() != field.spec().dim() {
        return Err(Error::DimensionMismatch {
            expected: field.spec().dim(),
            found: walker.dim(),
        });
    }
    let echo = ParamEcho {
        d: walker.dim(),
        gamma,
        kappa: walker.rate(),
        rho: field.spec().trap_kernel().rate(),
        nu: field.spec().density(),
    };
    if gamma.is_zero() || field.trap_count() == 0 || t == 0.0 {
        return Ok(SurvivalEstimate::exact_one_echo(EstimatorTag::Quenched, echo, t, n_walks, seed));
    }
    let acc = map_reduce(
        derive_seed(seed, 0x51),
        n_walks,
        DEFAULT_CHUNKS,
        |_, count, rng| -> Result<LogMeanExp> {
            let mut acc = LogMeanExp::new();
            for _ in 0..count {
                let x = sample_walker(walker, t, rng);
                acc.push(quenched_log_weight(field, gamma, &x)?);
            }
            Ok(acc)
        },
        |a, b| merge_results(a, b, |x, y| x.merge(y)),
    )
    .expect("nonempty budget")?;
    Ok(SurvivalEstimate::from_log_mean(EstimatorTag::Quenched, echo, t, &acc, seed))
}

/// Unbiased double Monte Carlo `E^ξ[Z^ξ]`: `n_outer` fields, `n_inner`
/// walkers per field.
pub fn annealed_direct(
    params: &ModelParams,
    t: f64,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<SurvivalEstimate> {
    annealed_direct_with(params, t, n_outer, n_inner, seed, &FieldOptions::default())
}

#[derive(Default)]
struct DirectAcc {
    outer: MeanVar,
    within: MeanVar,
}

/// [`annealed_direct`] with explicit truncation settings.
pub fn annealed_direct_with(
    params: &ModelParams,
    t: f64,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
    opts: &FieldOptions,
) -> Result<SurvivalEstimate> {
    check_t(t)?;
    if n_outer == 0 {
        return Err(Error::EmptyBudget("n_outer"));
    }
    if n_inner == 0 {
        return Err(Error::EmptyBudget("n_inner"));
    }
    if params.nu == 0.0 || params.gamma.is_zero() || t == 0.0 {
        return Ok(SurvivalEstimate::exact_one(EstimatorTag::Direct, params, t, n_outer * n_inner, seed));
    }
    let spec = opts.field_spec(params, t)?;
    let acc = map_reduce(
        derive_seed(seed, 0xD1),
        n_outer,
        DEFAULT_CHUNKS,
        |_, count, rng| -> Result<DirectAcc> {
            let mut acc = DirectAcc::default();
            for _ in 0..count {
                let field = TrapField::sample(&spec, rng);
                let mut inner = MeanVar::new();
                for _ in 0..n_inner {
                    let x = sample_walker(&params.walker, t, rng);
                    inner.push(quenched_log_weight(&field, params.gamma, &x)?.exp());
                }
                acc.outer.push(inner.mean);
                if n_inner > 1 {
                    acc.within.push(inner.variance() / n_inner as f64);
                }
            }
            Ok(acc)
        },
        |a, b| {
            merge_results(a, b, |x, y| {
                x.outer.merge(&y.outer);
                x.within.merge(&y.within);
            })
        },
    )
    .expect("nonempty budget")?;
    let mut est = SurvivalEstimate::from_mean_var(EstimatorTag::Direct, params, t, &acc.outer, seed);
    est.n_samples = n_outer * n_inner;
    let total = acc.outer.variance();
    let within = if n_inner > 1 { acc.within.mean } else { 0.0 };
    est.diagnostics = Diagnostics {
        between_variance: Some((total - within).max(0.0)),
        within_variance: Some(within),
        n_inner: Some(n_inner),
        ..Diagnostics::default()
    };
    Ok(est)
}

/// Inner statistic of the range-type representations for one `Y − X` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerStatistic {
    /// `|Range(Y − X)|` (γ = ∞).
    Range,
    /// `E^T|SoftRange(Y − X)| = Σ_x (1 − e^{−γ L(x)})` (finite γ).
    SoftRange(f64),
}

impl InnerStatistic {
    pub fn for_gamma(gamma: KillRate) -> Self {
        match gamma {
            KillRate::Hard => InnerStatistic::Range,
            KillRate::Finite(g) => InnerStatistic::SoftRange(g),
        }
    }

    /// Value of the statistic for the pair `(y, x)`.
    pub fn eval(&self, y: &WalkPath, x: &WalkPath, scratch: &mut PairScratch) -> f64 {
        match *self {
            InnerStatistic::Range => difference_range_size(y, x, scratch) as f64,
            InnerStatistic::SoftRange(g) => {
                let mut acc = 0.0;
                for_each_difference_local_time(y, x, scratch, |_, l| {
                    if l > 0.0 {
                        acc += -(-g * l).exp_m1();
                    }
                });
                acc
            }
        }
    }
}

/// A frozen bank of trap paths from the origin, shared across walker
/// candidates (common random numbers).
#[derive(Debug, Clone)]
pub struct YBank {
    paths: Vec<WalkPath>,
}

impl YBank {
    pub fn sample(kernel: &JumpKernel, t: f64, n: usize, seed: u64) -> YBank {
        let chunks = map_reduce(
            derive_seed(seed, 0xBA),
            n,
            DEFAULT_CHUNKS,
            |_, count, rng| {
                (0..count)
                    .map(|_| WalkPath::sample(kernel, Site::ORIGIN, t, rng))
                    .collect::<Vec<_>>()
            },
            |a, b| a.extend(b),
        );
        YBank {
            paths: chunks.unwrap_or_default(),
        }
    }

    pub fn from_paths(paths: Vec<WalkPath>) -> YBank {
        YBank { paths }
    }

    pub fn paths(&self) -> &[WalkPath] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Bank restricted to `[0, t]`.
    pub fn truncated(&self, t: f64) -> Result<YBank> {
        Ok(YBank {
            paths: self.paths.iter().map(|p| p.segment(0.0, t)).collect::<Result<_>>()?,
        })
    }

    /// Per-path values of `stat(Y − x)` over the bank.
    pub fn values(&self, x: &WalkPath, stat: InnerStatistic) -> Vec<f64> {
        let mut scratch = PairScratch::default();
        self.paths.iter().map(|y| stat.eval(y, x, &mut scratch)).collect()
    }

    /// Mean and variance of `stat(Y − x)` over the bank.
    pub fn inner(&self, x: &WalkPath, stat: InnerStatistic) -> MeanVar {
        let mut scratch = PairScratch::default();
        let mut acc = MeanVar::new();
        for y in &self.paths {
            acc.push(stat.eval(y, x, &mut scratch));
        }
        acc
    }
}

#[derive(Default)]
struct RangeAcc {
    weights: LogMeanExp,
    jensen: LogMeanExp,
}

fn annealed_inner_route(
    tag: EstimatorTag,
    params: &ModelParams,
    stat: InnerStatistic,
    t: f64,
    n_x: usize,
    n_y: usize,
    seed: u64,
) -> Result<SurvivalEstimate> {
    let nu = params.nu;
    let acc = map_reduce(
        derive_seed(seed, 0xA4),
        n_x,
        DEFAULT_CHUNKS,
        |_, count, rng| {
            let mut acc = RangeAcc::default();
            let mut scratch = PairScratch::default();
            for _ in 0..count {
                let x = sample_walker(&params.walker, t, rng);
                let mut inner = MeanVar::new();
                for _ in 0..n_y {
                    let y = WalkPath::sample(&params.traps, Site::ORIGIN, t, rng);
                    inner.push(stat.eval(&y, &x, &mut scratch));
                }
                let lw = -nu * inner.mean;
                acc.weights.push(lw);
                let var_mean = inner.variance() / n_y as f64;
                if var_mean > 0.0 {
                    acc.jensen.push(lw + (nu * nu * var_mean / 2.0).ln());
                } else {
                    acc.jensen.push(f64::NEG_INFINITY);
                }
            }
            acc
        },
        |a, b| {
            a.weights.merge(&b.weights);
            a.jensen.merge(&b.jensen);
        },
    )
    .expect("nonempty budget");
    let mut est = SurvivalEstimate::from_log_mean(tag, params.echo(), t, &acc.weights, seed);
    est.diagnostics = Diagnostics {
        jensen_correction: Some(acc.jensen.mean()),
        n_inner: Some(n_y),
        ..Diagnostics::default()
    };
    Ok(est)
}

fn check_inner_budget(n_x: usize, n_y: usize) -> Result<()> {
    if n_x == 0 {
        return Err(Error::EmptyBudget("n_x"));
    }
    if n_y == 0 {
        return Err(Error::EmptyBudget("n_y"));
    }
    Ok(())
}

/// `Z_{∞,t} = E^X[exp(−ν E^Y|Range(Y − X)|)]` with an independent inner
/// sample of `n_y` trap paths per walker path.
pub fn annealed_range(params: &ModelParams, t: f64, n_x: usize, n_y: usize, seed: u64) -> Result<SurvivalEstimate> {
    check_t(t)?;
    check_inner_budget(n_x, n_y)?;
    if !params.gamma.is_hard() {
        return Err(Error::param("gamma", "the range route needs gamma = inf"));
    }
    if !params.traps.is_symmetric() {
        return Err(Error::NonSymmetricKernel);
    }
    if params.nu == 0.0 {
        return Ok(SurvivalEstimate::exact_one(EstimatorTag::Range, params, t, n_x * n_y, seed));
    }
    annealed_inner_route(EstimatorTag::Range, params, InnerStatistic::Range, t, n_x, n_y, seed)
}

/// `Z_{γ,t} = E^X[exp(−ν E^{Y,T}|SoftRange(Y − X)|)]` with the
/// `T`-expectation in closed form.
pub fn annealed_softrange(
    params: &ModelParams,
    t: f64,
    n_x: usize,
    n_y: usize,
    seed: u64,
) -> Result<SurvivalEstimate> {
    check_t(t)?;
    check_inner_budget(n_x, n_y)?;
    let gamma = match params.gamma {
        KillRate::Hard => {
            return Err(Error::param("gamma", "use the range route for gamma = inf"));
        }
        KillRate::Finite(g) => g,
    };
    if !params.traps.is_symmetric() {
        return Err(Error::NonSymmetricKernel);
    }
    if params.nu == 0.0 || gamma == 0.0 || t == 0.0 {
        return Ok(SurvivalEstimate::exact_one(EstimatorTag::SoftRange, params, t, n_x * n_y, seed));
    }
    annealed_inner_route(
        EstimatorTag::SoftRange,
        params,
        InnerStatistic::SoftRange(gamma),
        t,
        n_x,
        n_y,
        seed,
    )
}

/// Step size and scheme for the PDE route; the box is sized per walker path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeOptions {
    pub dt: f64,
    pub scheme: Scheme,
    /// Truncation error for the box around each walker path.
    pub box_epsilon: f64,
}

impl Default for PdeOptions {
    fn default() -> Self {
        Self {
            dt: 0.02,
            scheme: Scheme::Rk4,
            box_epsilon: 1e-10,
        }
    }
}

#[derive(Default)]
struct PdeAcc {
    weights: LogMeanExp,
    max_residual: f64,
}

/// `Z_{γ,t} = E^X[exp(−νγ ∫ ṽ_X(s, X(s)) ds)]`, one trap-equation solve
/// per walker path.
pub fn annealed_pde(params: &ModelParams, t: f64, n_x: usize, opts: &PdeOptions, seed: u64) -> Result<SurvivalEstimate> {
    check_t(t)?;
    if n_x == 0 {
        return Err(Error::EmptyBudget("n_x"));
    }
    let gamma = match params.gamma {
        KillRate::Hard => return Err(Error::param("gamma", "the PDE route needs a finite gamma")),
        KillRate::Finite(g) => g,
    };
    if !params.traps.is_symmetric() {
        return Err(Error::NonSymmetricKernel);
    }
    if params.nu == 0.0 || gamma == 0.0 || t == 0.0 {
        return Ok(SurvivalEstimate::exact_one(EstimatorTag::Pde, params, t, n_x, seed));
    }
    let acc = map_reduce(
        derive_seed(seed, 0xDE),
        n_x,
        DEFAULT_CHUNKS,
        |_, count, rng| -> Result<PdeAcc> {
            let mut acc = PdeAcc::default();
            for _ in 0..count {
                let x = sample_walker(&params.walker, t, rng);
                let reach = x.sup_norm() + params.traps.max_step();
                let radius = truncation_radius(&params.traps, params.nu, t, reach, opts.box_epsilon)?;
                let cfg = IntegratorConfig::new(opts.dt, opts.scheme, radius.max(1), Boundary::DirichletOne)?;
                let sol = solve_v_x(&x, gamma, &params.traps, &cfg)?;
                acc.weights.push(sol.log_weight(gamma, params.nu));
                acc.max_residual = acc.max_residual.max(sol.identity_residual(gamma).abs());
            }
            Ok(acc)
        },
        |a, b| {
            merge_results(a, b, |x, y| {
                x.weights.merge(&y.weights);
                x.max_residual = x.max_residual.max(y.max_residual);
            })
        },
    )
    .expect("nonempty budget")?;
    let mut est = SurvivalEstimate::from_log_mean(EstimatorTag::Pde, params.echo(), t, &acc.weights, seed);
    est.diagnostics.max_identity_residual = Some(acc.max_residual);
    Ok(est)
}

/// `Z^{X≡0}_{γ,t} = exp(−ν E^Y[stat(Y)])`, the Pascal upper bound on the
/// annealed survival probability.
///
/// The log value `−ν Ê` is unbiased; its standard error is `ν · SE(Ê)`.
pub fn pascal_reference(params: &ModelParams, t: f64, n_y: usize, seed: u64) -> Result<SurvivalEstimate> {
    check_t(t)?;
    if n_y == 0 {
        return Err(Error::EmptyBudget("n_y"));
    }
    if !params.traps.is_symmetric() {
        return Err(Error::NonSymmetricKernel);
    }
    if params.nu == 0.0 || params.gamma.is_zero() {
        return Ok(SurvivalEstimate::exact_one(EstimatorTag::PascalRef, params, t, n_y, seed));
    }
    let stat = InnerStatistic::for_gamma(params.gamma);
    let still = WalkPath::constant(params.dim(), Site::ORIGIN, t);
    let acc = map_reduce(
        derive_seed(seed, 0x9A),
        n_y,
        DEFAULT_CHUNKS,
        |_, count, rng| {
            let mut acc = MeanVar::new();
            let mut scratch = PairScratch::default();
            for _ in 0..count {
                let y = WalkPath::sample(&params.traps, Site::ORIGIN, t, rng);
                acc.push(stat.eval(&y, &still, &mut scratch));
            }
            acc
        },
        |a, b| a.merge(&b),
    )
    .expect("nonempty budget");
    let nu = params.nu;
    let mut est = SurvivalEstimate::from_log(
        EstimatorTag::PascalRef,
        params.echo(),
        t,
        -nu * acc.mean,
        nu * acc.std_error(),
        n_y,
        seed,
    );
    est.diagnostics.n_inner = Some(n_y);
    Ok(est)
}

/// Draw one walker path from the origin (exposed for callers that build
/// their own common-random-number experiments).
pub fn sample_walker_path<R: Rng + ?Sized>(kernel: &JumpKernel, t: f64, rng: &mut R) -> WalkPath {
    WalkPath::sample(kernel, Site::ORIGIN, t, rng)
}
