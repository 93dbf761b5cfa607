//! Decay-rate fits, lattice Green functions and the immobile-trap exponent
//! harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KillRate, ModelParams, ParamEcho};
use crate::pam::{quenched_mass, Boundary, IntegratorConfig, Scheme};
use crate::parallel::{derive_seed, map_reduce, DEFAULT_CHUNKS};
use crate::stats::{adaptive_simpson, LogMeanExp};
use crate::survival::{quenched_survival, EstimatorTag, FieldOptions, SurvivalEstimate};
use crate::trapfield::TrapField;
use crate::walk::{JumpKernel, Site, WalkPath};

/// Green function value at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Green {
    /// Recurrent walk: the expected local time at the origin diverges.
    Infinite,
    Finite(f64),
}

impl Green {
    pub fn value(&self) -> f64 {
        match self {
            Green::Infinite => f64::INFINITY,
            Green::Finite(g) => *g,
        }
    }
}

/// `e^{-x} I_0(x)` by the trapezoid rule on `(1/π)∫_0^π e^{x(cos θ − 1)} dθ`,
/// which converges geometrically for this periodic analytic integrand.
pub fn scaled_bessel_i0(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let n = 64 + (16.0 * x.sqrt()) as usize;
    let h = std::f64::consts::PI / n as f64;
    let mut acc = 0.5 * (1.0 + (-2.0 * x).exp());
    for k in 1..n {
        acc += (x * ((k as f64 * h).cos() - 1.0)).exp();
    }
    acc / n as f64
}

/// `∫_T^∞ (e^{-s/d} I_0(s/d))^d ds` from the large-argument expansion
/// `e^{-x} I_0(x) = (2πx)^{-1/2} (1 + 1/(8x) + 9/(128x²) + 225/(3072x³) + …)`.
fn green_tail(d: usize, big_t: f64) -> f64 {
    // (1 + a1/x + a2/x² + a3/x³)^d expanded to third order in 1/x
    let (a1, a2, a3) = (1.0 / 8.0, 9.0 / 128.0, 225.0 / 3072.0);
    let df = d as f64;
    let c1 = df * a1;
    let c2 = df * a2 + df * (df - 1.0) / 2.0 * a1 * a1;
    let c3 = df * a3 + df * (df - 1.0) * a1 * a2 + df * (df - 1.0) * (df - 2.0) / 6.0 * a1 * a1 * a1;
    // integrand (2π s/d)^{-d/2} Σ c_k (d/s)^k
    let pref = (df / (2.0 * std::f64::consts::PI)).powf(df / 2.0);
    let mut total = 0.0;
    for (k, c) in [(0usize, 1.0), (1, c1), (2, c2), (3, c3)] {
        let p = df / 2.0 + k as f64;
        total += c * df.powi(k as i32) * big_t.powf(1.0 - p) / (p - 1.0);
    }
    pref * total
}

/// `G_d(0) = ∫_0^∞ p_t(0) dt` for the simple symmetric walk with jump rate
/// `rate`, where `p_t(0) = (e^{-t/d} I_0(t/d))^d` at rate 1.
///
/// This is the Fourier integral `∫ dk / (1 − φ(k))` with the `k`
/// integration carried out in closed form per coordinate. Quadrature error
/// is below 1e-9.
pub fn green_function(d: usize, rate: f64) -> Result<Green> {
    if d == 0 || d > crate::walk::MAX_DIM + 4 {
        return Err(Error::param("d", format!("{d} not supported")));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::param("rate", format!("{rate} must be > 0")));
    }
    if d <= 2 {
        return Ok(Green::Infinite);
    }
    let df = d as f64;
    let integrand = |s: f64| scaled_bessel_i0(s / df).powi(d as i32);
    let big_t = 4000.0;
    // split near the origin where the integrand varies fastest
    let mut head = 0.0;
    let mut a = 0.0;
    for b in [1.0, 4.0, 16.0, 64.0, 256.0, 1024.0, big_t] {
        head += adaptive_simpson(&integrand, a, b, 1e-12);
        a = b;
    }
    Ok(Green::Finite((head + green_tail(d, big_t)) / rate))
}

/// The d ≥ 3 annealed lower bound `νγ / (1 + γ G_d(0)/ρ)` for the simple
/// symmetric trap walk with rate `rho`.
pub fn annealed_lower_bound(d: usize, nu: f64, gamma: f64, rho: f64) -> Result<f64> {
    match green_function(d, 1.0)? {
        Green::Infinite => Ok(0.0),
        Green::Finite(g) => Ok(nu * gamma / (1.0 + gamma * g / rho)),
    }
}

/// Decay law fitted to `(t, −log Z_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `c · t`
    Exponential,
    /// `c · √t`
    Sqrt,
    /// `c · t / ln t`
    TOverLog,
    /// `c · t^a`, exponent free
    Power,
}

impl RateModel {
    fn design(&self, t: f64) -> f64 {
        match self {
            RateModel::Exponential => t,
            RateModel::Sqrt => t.sqrt(),
            RateModel::TOverLog => t / t.ln(),
            RateModel::Power => unreachable!("power model has no fixed design"),
        }
    }
}

/// One point of a decay series: `y = −log Z_t` with standard error `se`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub t: f64,
    pub y: f64,
    pub se: f64,
}

impl RatePoint {
    pub fn from_estimate(e: &SurvivalEstimate) -> RatePoint {
        RatePoint {
            t: e.t,
            y: -e.log_value,
            se: e.log_std_error,
        }
    }
}

/// Fitted decay coefficient (and exponent for [`RateModel::Power`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: RateModel,
    pub coefficient: f64,
    /// Standard error, inflated by the Birge ratio when residuals exceed
    /// the stated errors.
    pub coefficient_se: f64,
    pub exponent: Option<f64>,
    pub exponent_se: Option<f64>,
    /// Root mean square of the unweighted residuals in `y`.
    pub residual_rms: f64,
    /// `χ² / (n − p)` of the weighted fit.
    pub reduced_chi2: f64,
    pub t_grid: Vec<f64>,
}

/// Largest relative error of `Z_t` accepted by [`fit_rate`].
pub const MAX_REL_SE: f64 = 0.5;

/// Weighted least squares fit of a decay series.
///
/// Fixed-design models are fitted through the origin with weights
/// `1/se²`; the power model regresses `ln y` on `ln t` with weights
/// `(y/se)²`. When every `se` is zero the weights are uniform.
pub fn fit_rate(points: &[RatePoint], model: RateModel) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::param("points", format!("need >= 3 grid points, got {}", points.len())));
    }
    for p in points {
        if !(p.t > 0.0 && p.y.is_finite() && p.se >= 0.0) {
            return Err(Error::param("points", format!("invalid point {p:?}")));
        }
        if p.se > MAX_REL_SE {
            return Err(Error::NoisyFit { t: p.t, rel_se: p.se });
        }
        if model == RateModel::TOverLog && p.t <= 1.0 {
            return Err(Error::param("points", "t / ln t needs t > 1"));
        }
        if model == RateModel::Power && p.y <= 0.0 {
            return Err(Error::param("points", "power fit needs −log Z > 0"));
        }
    }
    let t_grid: Vec<f64> = points.iter().map(|p| p.t).collect();
    let uniform = points.iter().all(|p| p.se == 0.0);
    let n = points.len() as f64;
    match model {
        RateModel::Power => {
            let xs: Vec<f64> = points.iter().map(|p| p.t.ln()).collect();
            let ys: Vec<f64> = points.iter().map(|p| p.y.ln()).collect();
            let ws: Vec<f64> = points
                .iter()
                .map(|p| if uniform { 1.0 } else { (p.y / p.se.max(1e-12)).powi(2) })
                .collect();
            let (a, b, var_a, var_b, chi2) = weighted_line(&xs, &ys, &ws);
            let red = if n > 2.0 { chi2 / (n - 2.0) } else { 0.0 };
            let inflate = if uniform { red } else { red.max(1.0) };
            let coefficient = a.exp();
            let resid: f64 = points
                .iter()
                .map(|p| (p.y - coefficient * p.t.powf(b)).powi(2))
                .sum::<f64>()
                / n;
            Ok(RateFit {
                model,
                coefficient,
                coefficient_se: coefficient * (var_a * inflate).sqrt(),
                exponent: Some(b),
                exponent_se: Some((var_b * inflate).sqrt()),
                residual_rms: resid.sqrt(),
                reduced_chi2: red,
                t_grid,
            })
        }
        _ => {
            let mut sfy = 0.0;
            let mut sff = 0.0;
            for p in points {
                let f = model.design(p.t);
                let w = if uniform { 1.0 } else { 1.0 / (p.se * p.se).max(1e-24) };
                sfy += w * f * p.y;
                sff += w * f * f;
            }
            let c = sfy / sff;
            let mut chi2 = 0.0;
            let mut rss = 0.0;
            for p in points {
                let r = p.y - c * model.design(p.t);
                let w = if uniform { 1.0 } else { 1.0 / (p.se * p.se).max(1e-24) };
                chi2 += w * r * r;
                rss += r * r;
            }
            let red = chi2 / (n - 1.0);
            let inflate = if uniform { red } else { red.max(1.0) };
            Ok(RateFit {
                model,
                coefficient: c,
                coefficient_se: (inflate / sff).sqrt(),
                exponent: None,
                exponent_se: None,
                residual_rms: (rss / n).sqrt(),
                reduced_chi2: red,
                t_grid,
            })
        }
    }
}

/// Fit a series of estimates (each carries its own `t`).
pub fn fit_estimates(estimates: &[SurvivalEstimate], model: RateModel) -> Result<RateFit> {
    let points: Vec<RatePoint> = estimates.iter().map(RatePoint::from_estimate).collect();
    fit_rate(&points, model)
}

/// Weighted line `y = a + b x`: returns `(a, b, var_a, var_b, χ²)`.
fn weighted_line(xs: &[f64], ys: &[f64], ws: &[f64]) -> (f64, f64, f64, f64, f64) {
    let sw: f64 = ws.iter().sum();
    let sx: f64 = ws.iter().zip(xs).map(|(w, x)| w * x).sum();
    let sy: f64 = ws.iter().zip(ys).map(|(w, y)| w * y).sum();
    let xm = sx / sw;
    let ym = sy / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((w, x), y) in ws.iter().zip(xs).zip(ys) {
        sxx += w * (x - xm) * (x - xm);
        sxy += w * (x - xm) * (y - ym);
    }
    let b = sxy / sxx;
    let a = ym - b * xm;
    let chi2: f64 = ws
        .iter()
        .zip(xs)
        .zip(ys)
        .map(|((w, x), y)| w * (y - a - b * x).powi(2))
        .sum();
    let var_b = 1.0 / sxx;
    let var_a = 1.0 / sw + xm * xm / sxx;
    (a, b, var_a, var_b, chi2)
}

/// Slopes of `ln y` against `ln t` between consecutive grid points.
pub fn local_exponents(points: &[RatePoint]) -> Vec<f64> {
    points
        .windows(2)
        .map(|w| (w[1].y.ln() - w[0].y.ln()) / (w[1].t.ln() - w[0].t.ln()))
        .collect()
}

/// Stay probability of a rate-`kappa` nearest-neighbour walk in d = 1 on
/// the interval `[−a, b]` up to time `t`, by the sine eigenbasis of the
/// killed generator.
pub fn interval_stay_probability(a: u32, b: u32, kappa: f64, t: f64) -> f64 {
    let n = (a + b + 1) as usize;
    let np1 = (n + 1) as f64;
    let j0 = f64::from(a + 1);
    let mut acc = 0.0;
    // Σ_j sin(jθ) vanishes for even k
    for k in (1..=n).step_by(2) {
        let theta = k as f64 * std::f64::consts::PI / np1;
        let lambda = -kappa * (1.0 - theta.cos());
        // sin((n+1)θ/2) = sin(kπ/2) = ±1 for odd k
        let sign = if k % 4 == 1 { 1.0 } else { -1.0 };
        let sum_sin = sign * (n as f64 * theta / 2.0).sin() / (theta / 2.0).sin();
        acc += (j0 * theta).sin() * (lambda * t).exp() * sum_sin;
    }
    (2.0 / np1 * acc).clamp(0.0, 1.0)
}

/// `P(|Range_t| ≤ r)` for the d = 1 nearest-neighbour walk: intervals of
/// `r` sites containing the origin, minus their consecutive overlaps.
pub fn range_cdf_1d(r: u32, kappa: f64, t: f64) -> f64 {
    if r == 0 {
        return 0.0;
    }
    let windows = |size: u32| -> f64 {
        if size == 0 {
            return 0.0;
        }
        (0..size).map(|a| interval_stay_probability(a, size - 1 - a, kappa, t)).sum()
    };
    (windows(r) - windows(r - 1)).clamp(0.0, 1.0)
}

/// `E[p^{|Range_t|}]` for the d = 1 nearest-neighbour walk, computed as
/// `(1 − p) Σ_r p^r P(|Range_t| ≤ r)` and truncated once the remaining
/// tail `p^{r+1}` is below `1e-15` of the partial sum.
pub fn exact_hard_trap_survival_1d(p: f64, kappa: f64, t: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param("p", format!("{p} not in (0, 1)")));
    }
    let mut total = 0.0;
    let mut pr = 1.0;
    for r in 1u32.. {
        pr *= p;
        total += pr * range_cdf_1d(r, kappa, t);
        if pr * p < 1e-15 * (1.0 - p) * total || r > 1_000_000 {
            break;
        }
    }
    Ok((1.0 - p) * total)
}

/// Route for the hard-trap exponent check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DvRoute {
    /// Average `p^{|Range|}` over `n` sampled walks.
    MonteCarlo { n: usize },
    /// Exact range law of the d = 1 nearest-neighbour walk.
    ExactRangeLaw,
}

/// Result of the hard-trap exponent check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvReport {
    pub points: Vec<RatePoint>,
    pub fit: RateFit,
    pub local_exponents: Vec<f64>,
    /// The large-t exponent `d / (d + 2)`.
    pub target_exponent: f64,
}

/// `Z_{∞,t} = E[p^{|Range_t|}]` for immobile Bernoulli hard traps over a
/// `t` grid, then a free-exponent fit of `−log Z_t`.
pub fn dv_exponent_check(
    walker: &JumpKernel,
    p: f64,
    t_grid: &[f64],
    route: DvRoute,
    seed: u64,
) -> Result<DvReport> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param("p", format!("{p} not in (0, 1)")));
    }
    let d = walker.dim();
    let mut points = Vec::with_capacity(t_grid.len());
    for (i, &t) in t_grid.iter().enumerate() {
        let point = match route {
            DvRoute::ExactRangeLaw => {
                if d != 1 || !walker.is_nearest_neighbor() || !walker.is_symmetric() {
                    return Err(Error::Unsupported(
                        "the exact range law covers the symmetric nearest-neighbour walk in d = 1".into(),
                    ));
                }
                let z = exact_hard_trap_survival_1d(p, walker.rate(), t)?;
                RatePoint { t, y: -z.ln(), se: 0.0 }
            }
            DvRoute::MonteCarlo { n } => {
                if n == 0 {
                    return Err(Error::EmptyBudget("n"));
                }
                let lnp = p.ln();
                let acc = map_reduce(
                    derive_seed(seed, 0xD5 + i as u64),
                    n,
                    DEFAULT_CHUNKS,
                    |_, count, rng| {
                        let mut acc = LogMeanExp::new();
                        for _ in 0..count {
                            let x = WalkPath::sample(walker, Site::ORIGIN, t, rng);
                            acc.push(lnp * x.range_size() as f64);
                        }
                        acc
                    },
                    |a, b| a.merge(&b),
                )
                .expect("nonempty budget");
                RatePoint {
                    t,
                    y: -acc.log_mean(),
                    se: acc.rel_std_error(),
                }
            }
        };
        points.push(point);
    }
    let fit = fit_rate(&points, RateModel::Power)?;
    Ok(DvReport {
        local_exponents: local_exponents(&points),
        points,
        fit,
        target_exponent: d as f64 / (d as f64 + 2.0),
    })
}

/// Quenched decay rate on one field plus the bound `0 < λ ≤ γν + κ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchedRateReport {
    pub estimates: Vec<SurvivalEstimate>,
    /// Exponential fit through the origin of the cumulative series.
    pub fit: RateFit,
    /// Batch-means rate from successive grid increments (first interval
    /// dropped as burn-in).
    pub rate: f64,
    pub rate_se: f64,
    /// `γν + κ` (infinite for hard traps).
    pub upper_bound: f64,
    /// Whether `rate − 3·rate_se ≤ bound` and `rate + 3·rate_se > 0`.
    pub within_bounds: bool,
}

/// Mean of the increments `(y_{k+1} − y_k)/(t_{k+1} − t_k)` weighted by the
/// interval lengths, with its batch-means standard error.
///
/// Needs at least three points; the increment before the first point is
/// never used.
pub fn increment_rate(points: &[RatePoint]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(Error::param("points", format!("need >= 3 grid points, got {}", points.len())));
    }
    let incs: Vec<(f64, f64)> = points
        .windows(2)
        .map(|w| {
            let dt = w[1].t - w[0].t;
            (dt, (w[1].y - w[0].y) / dt)
        })
        .collect();
    let total: f64 = incs.iter().map(|i| i.0).sum();
    let rate = incs.iter().map(|(dt, r)| dt * r).sum::<f64>() / total;
    let n = incs.len() as f64;
    let spread = incs.iter().map(|(dt, r)| (dt * (r - rate)).powi(2)).sum::<f64>();
    let se = (spread * n / (n - 1.0)).sqrt() / total;
    Ok((rate, se))
}

/// How [`quenched_rate`] evaluates `Z^ξ_t` on the fixed field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuenchedRoute {
    /// Average over `walks_per_t` walker paths per grid point.
    MonteCarlo { walks_per_t: usize },
    /// `u(t, 0)` of the parabolic Anderson model on a box of certified
    /// walker reach (RK4 with step `dt`, zero boundary).
    FeynmanKac { dt: f64 },
}

/// Fit `−log Z^ξ_t ≈ λ t` on one field sampled once at the largest horizon
/// and shared across the grid.
pub fn quenched_rate(
    field_seed: u64,
    params: &ModelParams,
    t_grid: &[f64],
    route: QuenchedRoute,
    seed: u64,
) -> Result<QuenchedRateReport> {
    let t_max = t_grid.iter().copied().fold(0.0, f64::max);
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("t_grid", "must be strictly increasing"));
    }
    let spec = FieldOptions::default().field_spec(params, t_max)?;
    let field = TrapField::sample(&spec, &mut crate::parallel::substream(field_seed, 0));
    let estimates = match route {
        QuenchedRoute::MonteCarlo { walks_per_t } => t_grid
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                quenched_survival(&field, params.gamma, &params.walker, t, walks_per_t, derive_seed(seed, i as u64))
            })
            .collect::<Result<Vec<_>>>()?,
        QuenchedRoute::FeynmanKac { dt } => {
            let gamma = params
                .gamma
                .as_finite()
                .ok_or_else(|| Error::param("gamma", "the Feynman-Kac route needs a finite gamma"))?;
            let cfg = IntegratorConfig::new(dt, Scheme::Rk4, spec.walker_reach(), Boundary::DirichletZero)?;
            let masses = quenched_mass(&field, &params.walker, gamma, t_grid, &cfg)?;
            let echo = ParamEcho {
                d: params.dim(),
                gamma: params.gamma,
                kappa: params.kappa(),
                rho: params.rho(),
                nu: params.nu,
            };
            masses
                .iter()
                .zip(t_grid)
                .map(|(m, &t)| SurvivalEstimate::from_log(EstimatorTag::Pam, echo, t, m.ln(), 0.0, 0, seed))
                .collect()
        }
    };
    let fit = fit_estimates(&estimates, RateModel::Exponential)?;
    let upper_bound = match params.gamma {
        KillRate::Hard => f64::INFINITY,
        KillRate::Finite(g) => g * params.nu + params.kappa(),
    };
    let points: Vec<RatePoint> = estimates.iter().map(RatePoint::from_estimate).collect();
    let (rate, rate_se) = increment_rate(&points)?;
    let within_bounds = rate - 3.0 * rate_se <= upper_bound && rate + 3.0 * rate_se > 0.0;
    Ok(QuenchedRateReport {
        estimates,
        fit,
        rate,
        rate_se,
        upper_bound,
        within_bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(f: impl Fn(f64) -> f64, ts: &[f64]) -> Vec<RatePoint> {
        ts.iter().map(|&t| RatePoint { t, y: f(t), se: 0.0 }).collect()
    }

    #[test]
    fn bessel_small_and_large() {
        assert_eq!(scaled_bessel_i0(0.0), 1.0);
        // I_0(1) = 1.2660658777520082
        assert!((scaled_bessel_i0(1.0) - 1.2660658777520082 * (-1.0f64).exp()).abs() < 1e-15);
        let x: f64 = 500.0;
        let asym = (2.0 * std::f64::consts::PI * x).powf(-0.5) * (1.0 + 1.0 / (8.0 * x) + 9.0 / (128.0 * x * x));
        assert!((scaled_bessel_i0(x) - asym).abs() < 1e-10);
    }

    #[test]
    fn green_recurrent_and_scaling() {
        assert_eq!(green_function(1, 1.0).unwrap(), Green::Infinite);
        assert_eq!(green_function(2, 3.0).unwrap(), Green::Infinite);
        let g = green_function(3, 1.0).unwrap().value();
        let g2 = green_function(3, 2.0).unwrap().value();
        assert!((g2 - g / 2.0).abs() < 1e-14);
        assert!(green_function(0, 1.0).is_err());
    }

    #[test]
    fn increment_rate_linear_and_noisy() {
        let (r, se) = increment_rate(&pts(|t| 3.0 + 0.5 * t, &[1.0, 2.0, 4.0, 8.0])).unwrap();
        assert!((r - 0.5).abs() < 1e-14 && se < 1e-14);
        let ys = [0.0, 1.0, 3.0, 4.0];
        let p: Vec<RatePoint> = ys.iter().enumerate().map(|(i, &y)| RatePoint { t: i as f64, y, se: 0.0 }).collect();
        let (r, se) = increment_rate(&p).unwrap();
        // increments 1, 2, 1
        assert!((r - 4.0 / 3.0).abs() < 1e-14);
        let sd = ((1.0f64 / 9.0 + 4.0 / 9.0 + 1.0 / 9.0) / 2.0).sqrt();
        assert!((se - sd / 3f64.sqrt()).abs() < 1e-14);
        assert!(increment_rate(&p[..2]).is_err());
    }

    #[test]
    fn exponential_fit_exact() {
        let f = fit_rate(&pts(|t| 2.0 * t, &[1.0, 2.0, 4.0, 8.0]), RateModel::Exponential).unwrap();
        assert!((f.coefficient - 2.0).abs() < 1e-14);
        assert!(f.residual_rms < 1e-14);
    }

    #[test]
    fn sqrt_and_power_fits_exact() {
        let p = pts(|t| 3.0 * t.sqrt(), &[4.0, 16.0, 64.0, 256.0]);
        let f = fit_rate(&p, RateModel::Sqrt).unwrap();
        assert!((f.coefficient - 3.0).abs() < 1e-13);
        let g = fit_rate(&p, RateModel::Power).unwrap();
        assert!((g.exponent.unwrap() - 0.5).abs() < 1e-13);
        assert!((g.coefficient - 3.0).abs() < 1e-12);
        let h = fit_rate(&pts(|t| 1.5 * t / t.ln(), &[25.0, 100.0, 400.0]), RateModel::TOverLog).unwrap();
        assert!((h.coefficient - 1.5).abs() < 1e-13);
    }

    #[test]
    fn fit_guards() {
        let two = pts(|t| t, &[1.0, 2.0]);
        assert!(fit_rate(&two, RateModel::Exponential).is_err());
        let mut noisy = pts(|t| t, &[1.0, 2.0, 3.0]);
        noisy[1].se = 0.7;
        assert!(matches!(fit_rate(&noisy, RateModel::Exponential), Err(Error::NoisyFit { .. })));
    }

    #[test]
    fn stay_probability_small_cases() {
        // single site: no jump
        assert!((interval_stay_probability(0, 0, 1.0, 2.0) - (-2.0f64).exp()).abs() < 1e-15);
        // two sites {0,1}: exits at rate 1/2 from each site, P = e^{-t/2}
        assert!((interval_stay_probability(0, 1, 1.0, 3.0) - (-1.5f64).exp()).abs() < 1e-14);
        assert!((range_cdf_1d(1, 1.0, 2.0) - (-2.0f64).exp()).abs() < 1e-15);
        // cdf reaches one
        assert!((range_cdf_1d(60, 1.0, 5.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_range_law_matches_simulation() {
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let mut rng = crate::parallel::substream(12, 0);
        let n = 100_000;
        let t = 6.0;
        let mut hist = vec![0usize; 40];
        for _ in 0..n {
            hist[WalkPath::sample(&k, Site::ORIGIN, t, &mut rng).range_size()] += 1;
        }
        let mut cum = 0;
        for r in 1..10u32 {
            cum += hist[r as usize];
            let p = range_cdf_1d(r, 1.0, t);
            let emp = cum as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-6);
            assert!((emp - p).abs() < 4.0 * se, "r={r}: {emp} vs {p}");
        }
    }

    #[test]
    fn power_fit_recovers_one_third() {
        let p = pts(|t| 1.7 * t.powf(1.0 / 3.0), &[1e2, 1e3, 1e4]);
        let f = fit_rate(&p, RateModel::Power).unwrap();
        assert!((f.exponent.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }
}
