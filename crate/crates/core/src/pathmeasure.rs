//! Self-normalized importance sampling of the annealed path measure and the
//! d = 1 fluctuation, thin-point and hole functionals.
//!
//! A candidate walker path `X` carries the log weight
//! `−ν Ê^Y[stat(Y − X)] + ln(dP/dQ)(X)`, where `Ê^Y` averages over a frozen
//! bank of trap paths shared by every candidate and `dP/dQ` is the
//! likelihood ratio of the free walk against the proposal that drew `X`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::parallel::{derive_seed, map_reduce, DEFAULT_CHUNKS};
use crate::stats::{weighted_quantile, MeanVar};
use crate::survival::{InnerStatistic, YBank};
use crate::walk::{JumpKernel, Site, WalkPath};

/// Law used to draw candidate walker paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Proposal {
    /// The walker's own law.
    Free,
    /// d = 1 nearest-neighbour walk whose range-extending jumps have their
    /// rate multiplied by `e^{-beta}`.
    RangePenalty { beta: f64 },
    /// d = 1 nearest-neighbour walk jumping right at rate `κ/2·e^{-θx}` and
    /// left at rate `κ/2·e^{θx}`.
    Confined { theta: f64 },
}

impl Proposal {
    fn validate(&self, walker: &JumpKernel) -> Result<()> {
        match self {
            Proposal::Free => Ok(()),
            Proposal::RangePenalty { beta: v } | Proposal::Confined { theta: v } => {
                if walker.dim() != 1 || !walker.is_nearest_neighbor() || !walker.is_symmetric() {
                    return Err(Error::Unsupported(
                        "tilted proposals need the simple symmetric walk in d = 1".into(),
                    ));
                }
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(Error::param("proposal", format!("{v} must be finite and >= 0")));
                }
                Ok(())
            }
        }
    }

    /// `(right, left)` jump rates at `x` given the current range `[lo, hi]`.
    fn rates(&self, kappa: f64, x: i32, lo: i32, hi: i32) -> (f64, f64) {
        let half = 0.5 * kappa;
        match *self {
            Proposal::Free => (half, half),
            Proposal::RangePenalty { beta } => {
                let damp = (-beta).exp();
                (
                    if x == hi { half * damp } else { half },
                    if x == lo { half * damp } else { half },
                )
            }
            Proposal::Confined { theta } => {
                let e = (theta * f64::from(x)).exp();
                (half / e, half * e)
            }
        }
    }

    /// Draw a path from the origin and return it with `ln(dP/dQ)`.
    pub fn sample<R: Rng + ?Sized>(&self, walker: &JumpKernel, t: f64, rng: &mut R) -> (WalkPath, f64) {
        if *self == Proposal::Free {
            return (WalkPath::sample(walker, Site::ORIGIN, t, rng), 0.0);
        }
        let kappa = walker.rate();
        let half = 0.5 * kappa;
        let (mut x, mut lo, mut hi) = (0i32, 0i32, 0i32);
        let mut now = 0.0;
        let mut log_lr = 0.0;
        let mut times = Vec::new();
        let mut positions = vec![Site::ORIGIN];
        loop {
            let (r, l) = self.rates(kappa, x, lo, hi);
            let total = r + l;
            let e: f64 = Exp1.sample(rng);
            let hold = e / total;
            if now + hold > t {
                log_lr += (total - kappa) * (t - now);
                break;
            }
            log_lr += (total - kappa) * hold;
            now += hold;
            if rng.random::<f64>() * total < r {
                log_lr += (half / r).ln();
                x += 1;
            } else {
                log_lr += (half / l).ln();
                x -= 1;
            }
            lo = lo.min(x);
            hi = hi.max(x);
            times.push(now);
            positions.push(Site::at(x));
        }
        let path = WalkPath::from_jumps(1, kappa, times, positions, t).expect("valid nearest-neighbour path");
        (path, log_lr)
    }
}

/// One weighted candidate of the annealed path measure.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPathSample {
    pub path: WalkPath,
    /// `−ν Ê + ln(dP/dQ)`, up to a constant common to the ensemble.
    pub log_weight: f64,
    /// `ln(dP/dQ)` of the proposal.
    pub log_likelihood_ratio: f64,
    /// Standard error of the inner mean `Ê`.
    pub inner_se: f64,
}

/// A weighted ensemble at one horizon.
#[derive(Debug, Clone)]
pub struct GibbsEnsemble {
    pub t: f64,
    pub proposal: Proposal,
    pub samples: Vec<WeightedPathSample>,
    pub n_eff: f64,
}

/// Minimum effective sample size for a usable ensemble.
pub const N_EFF_FLOOR: f64 = 10.0;

/// Self-normalized weights `w_i / Σ w` from log weights.
pub fn normalized_weights(log_weights: &[f64]) -> Vec<f64> {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return vec![0.0; log_weights.len()];
    }
    let w: Vec<f64> = log_weights.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// `(Σw)² / Σw²`.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let w = normalized_weights(log_weights);
    let s2: f64 = w.iter().map(|x| x * x).sum();
    if s2 == 0.0 {
        0.0
    } else {
        1.0 / s2
    }
}

impl GibbsEnsemble {
    pub fn log_weights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.log_weight).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        normalized_weights(&self.log_weights())
    }

    /// Weighted mean of `f(path)` and its delta-method standard error.
    pub fn weighted_mean<F: Fn(&WalkPath) -> f64>(&self, f: F) -> (f64, f64) {
        let w = self.weights();
        let vals: Vec<f64> = self.samples.iter().map(|s| f(&s.path)).collect();
        let mean: f64 = w.iter().zip(&vals).map(|(w, v)| w * v).sum();
        let var: f64 = w.iter().zip(&vals).map(|(w, v)| w * w * (v - mean).powi(2)).sum();
        (mean, var.sqrt())
    }
}

/// Draw `n` candidates from `proposal`, weight them against a shared bank
/// of `n_y` trap paths, and fail if the effective sample size is below
/// [`N_EFF_FLOOR`].
pub fn sample_gibbs_ensemble(
    params: &ModelParams,
    t: f64,
    n: usize,
    n_y: usize,
    proposal: Proposal,
    seed: u64,
) -> Result<GibbsEnsemble> {
    let bank = YBank::sample(&params.traps, t, n_y, derive_seed(seed, 1));
    sample_gibbs_ensemble_with_bank(params, t, n, &bank, proposal, seed)
}

/// [`sample_gibbs_ensemble`] against a caller-supplied trap bank.
pub fn sample_gibbs_ensemble_with_bank(
    params: &ModelParams,
    t: f64,
    n: usize,
    bank: &YBank,
    proposal: Proposal,
    seed: u64,
) -> Result<GibbsEnsemble> {
    if n == 0 {
        return Err(Error::EmptyBudget("n"));
    }
    if bank.is_empty() && params.nu > 0.0 {
        return Err(Error::EmptyBudget("n_y"));
    }
    if !params.traps.is_symmetric() {
        return Err(Error::NonSymmetricKernel);
    }
    proposal.validate(&params.walker)?;
    let stat = InnerStatistic::for_gamma(params.gamma);
    let nu = params.nu;
    let samples = map_reduce(
        derive_seed(seed, 2),
        n,
        DEFAULT_CHUNKS,
        |_, count, rng| {
            (0..count)
                .map(|_| {
                    let (path, log_lr) = proposal.sample(&params.walker, t, rng);
                    let inner = if nu > 0.0 { bank.inner(&path, stat) } else { MeanVar::new() };
                    WeightedPathSample {
                        log_weight: -nu * inner.mean + log_lr,
                        log_likelihood_ratio: log_lr,
                        inner_se: inner.std_error(),
                        path,
                    }
                })
                .collect::<Vec<_>>()
        },
        |a, b| a.extend(b),
    )
    .expect("nonempty budget");
    let n_eff = effective_sample_size(&samples.iter().map(|s| s.log_weight).collect::<Vec<_>>());
    if n_eff < N_EFF_FLOOR {
        return Err(Error::DegenerateEnsemble {
            n_eff,
            floor: N_EFF_FLOOR,
        });
    }
    Ok(GibbsEnsemble {
        t,
        proposal,
        samples,
        n_eff,
    })
}

/// Pick the candidate proposal with the largest pilot effective sample
/// size (pilot ensembles use their own seed and are discarded).
pub fn tune_proposal(
    params: &ModelParams,
    t: f64,
    candidates: &[Proposal],
    pilot_n: usize,
    bank: &YBank,
    seed: u64,
) -> Result<(Proposal, f64)> {
    let mut best: Option<(Proposal, f64)> = None;
    for (i, &c) in candidates.iter().enumerate() {
        let n_eff = match sample_gibbs_ensemble_with_bank(params, t, pilot_n, bank, c, derive_seed(seed, 100 + i as u64)) {
            Ok(e) => e.n_eff,
            Err(Error::DegenerateEnsemble { n_eff, .. }) => n_eff,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|(_, b)| n_eff > b) {
            best = Some((c, n_eff));
        }
    }
    best.ok_or(Error::EmptyBudget("candidates"))
}

/// Weighted summary of `‖X‖_t` under an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub t: f64,
    pub n: usize,
    pub n_eff: f64,
    /// `(q, weighted q-quantile of ‖X‖_t)`.
    pub quantiles: Vec<(f64, f64)>,
    pub median: f64,
    pub alpha: f64,
    pub epsilon: f64,
    /// Weighted `P(‖X‖_t ∈ (α t^{1/3}, t^{11/24+ε}))`.
    pub window_probability: f64,
    /// Weighted `P(‖X‖_t ≤ α t^{1/3})`.
    pub lower_probability: f64,
    /// Weighted `P(‖X‖_t ≥ t^{11/24+ε})`.
    pub upper_probability: f64,
}

const REPORT_QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

/// Window probabilities and quantiles of the sup-norm under a d = 1
/// ensemble.
pub fn fluctuation_report(ensemble: &GibbsEnsemble, alpha: f64, epsilon: f64) -> Result<FluctuationReport> {
    if ensemble.samples.first().is_some_and(|s| s.path.dim() != 1) {
        return Err(Error::UnsupportedDimension {
            required: 1,
            found: ensemble.samples[0].path.dim(),
        });
    }
    let t = ensemble.t;
    let w = ensemble.weights();
    let norms: Vec<f64> = ensemble.samples.iter().map(|s| s.path.sup_norm() as f64).collect();
    let lower = alpha * t.powf(1.0 / 3.0);
    let upper = t.powf(11.0 / 24.0 + epsilon);
    let mut p_low = 0.0;
    let mut p_high = 0.0;
    for (wi, &x) in w.iter().zip(&norms) {
        if x <= lower {
            p_low += wi;
        }
        if x >= upper {
            p_high += wi;
        }
    }
    let quantiles: Vec<(f64, f64)> = REPORT_QUANTILES
        .iter()
        .map(|&q| (q, weighted_quantile(&norms, &w, q)))
        .collect();
    Ok(FluctuationReport {
        t,
        n: ensemble.samples.len(),
        n_eff: ensemble.n_eff,
        median: weighted_quantile(&norms, &w, 0.5),
        quantiles,
        alpha,
        epsilon,
        window_probability: (1.0 - p_low - p_high).max(0.0),
        lower_probability: p_low,
        upper_probability: p_high,
    })
}

/// Least-squares slope of `ln median` against `ln t` and the slopes
/// between consecutive reports.
pub fn median_growth(reports: &[FluctuationReport]) -> (f64, Vec<f64>) {
    let xs: Vec<f64> = reports.iter().map(|r| r.t.ln()).collect();
    let ys: Vec<f64> = reports.iter().map(|r| r.median.max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let local = xs.windows(2).zip(ys.windows(2)).map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0])).collect();
    (sxy / sxx, local)
}

fn require_1d(path: &WalkPath) -> Result<()> {
    if path.dim() != 1 {
        return Err(Error::UnsupportedDimension {
            required: 1,
            found: path.dim(),
        });
    }
    Ok(())
}

/// `F_γ(path) = Σ_x e^{−γ L(x)} 1{L(x) > 0}`.
pub fn thin_point_functional(path: &WalkPath, gamma: f64) -> Result<f64> {
    require_1d(path)?;
    if !(gamma >= 0.0) {
        return Err(Error::param("gamma", "must be >= 0"));
    }
    Ok(path
        .local_times()
        .into_iter()
        .filter(|(_, l)| *l > 0.0)
        .map(|(_, l)| (-gamma * l).exp())
        .sum())
}

/// `G(path) = sup − inf + 1 − |Range|`, the number of unvisited sites
/// inside the span.
pub fn hole_functional(path: &WalkPath) -> Result<u64> {
    let (max, min) = path.running_extrema()?;
    Ok((i64::from(max) - i64::from(min) + 1) as u64 - path.range_size() as u64)
}

/// Mean of a functional at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
}

/// `E[exp(c · f(Y) / ln t)]` over `n` paths for each `t` in the grid.
pub fn exponential_moment_series<F>(
    kernel: &JumpKernel,
    functional: F,
    c: f64,
    t_grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<MomentPoint>>
where
    F: Fn(&WalkPath) -> Result<f64> + Sync,
{
    if n == 0 {
        return Err(Error::EmptyBudget("n"));
    }
    t_grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if t <= 1.0 {
                return Err(Error::param("t", "needs t > 1 for the 1/ln t scaling"));
            }
            let scale = c / t.ln();
            let acc = map_reduce(
                derive_seed(seed, i as u64),
                n,
                DEFAULT_CHUNKS,
                |_, count, rng| -> Result<MeanVar> {
                    let mut acc = MeanVar::new();
                    for _ in 0..count {
                        let y = WalkPath::sample(kernel, Site::ORIGIN, t, rng);
                        acc.push((scale * functional(&y)?).exp());
                    }
                    Ok(acc)
                },
                |a, b| match (a.as_mut(), b) {
                    (Ok(x), Ok(y)) => x.merge(&y),
                    (Ok(_), Err(e)) => *a = Err(e),
                    _ => {}
                },
            )
            .expect("nonempty budget")?;
            Ok(MomentPoint {
                t,
                mean: acc.mean,
                se: acc.std_error(),
            })
        })
        .collect()
}

/// Weighted least-squares slope of the mean against `ln t`, with its
/// standard error.
pub fn moment_trend(points: &[MomentPoint]) -> (f64, f64) {
    let ws: Vec<f64> = points.iter().map(|p| 1.0 / (p.se * p.se).max(1e-24)).collect();
    let xs: Vec<f64> = points.iter().map(|p| p.t.ln()).collect();
    let sw: f64 = ws.iter().sum();
    let xm = ws.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = ws.iter().zip(points).map(|(w, p)| w * p.mean).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((w, x), p) in ws.iter().zip(&xs).zip(points) {
        sxx += w * (x - xm).powi(2);
        sxy += w * (x - xm) * (p.mean - ym);
    }
    (sxy / sxx, (1.0 / sxx).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::KillRate;
    use crate::parallel::substream;
    use crate::walk::{difference_path, PairScratch};

    fn path(times: &[f64], xs: &[i32], t: f64, rate: f64) -> WalkPath {
        WalkPath::from_jumps(1, rate, times.to_vec(), xs.iter().map(|&x| Site::at(x)).collect(), t).unwrap()
    }

    #[test]
    fn thin_points_limits() {
        let still = WalkPath::constant(1, Site::at(0), 3.0);
        assert!((thin_point_functional(&still, 0.7).unwrap() - (-2.1f64).exp()).abs() < 1e-15);
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let y = WalkPath::sample(&k, Site::ORIGIN, 20.0, &mut substream(3, 0));
        assert_eq!(thin_point_functional(&y, 0.0).unwrap(), y.range_size() as f64);
        let mut prev = f64::INFINITY;
        for g in [0.0, 0.5, 1.0, 4.0, 16.0, 1e3] {
            let f = thin_point_functional(&y, g).unwrap();
            assert!(f <= prev);
            prev = f;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn holes() {
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let y = WalkPath::sample(&k, Site::ORIGIN, 50.0, &mut substream(4, 0));
        assert_eq!(hole_functional(&y).unwrap(), 0);
        let two = path(&[1.0], &[0, 2], 3.0, 1.0);
        assert_eq!(hole_functional(&two).unwrap(), 1);
    }

    #[test]
    fn weights_shift_invariant() {
        let lw = [-3.0, -1.5, -7.25, -2.0];
        let shifted: Vec<f64> = lw.iter().map(|l| l + 1234.5).collect();
        let a = normalized_weights(&lw);
        let b = normalized_weights(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((effective_sample_size(&[0.0; 8]) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn free_proposal_has_unit_ratio() {
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let (_, lr) = Proposal::Free.sample(&k, 5.0, &mut substream(1, 1));
        assert_eq!(lr, 0.0);
        let (p, lr) = Proposal::RangePenalty { beta: 0.0 }.sample(&k, 5.0, &mut substream(1, 1));
        assert!(lr.abs() < 1e-12);
        p.check_kernel(&k).unwrap();
    }

    #[test]
    fn likelihood_ratio_reweights_to_free_law() {
        // E_Q[dP/dQ · f] = E_P[f] for a bounded f
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let t = 6.0;
        let n = 200_000;
        let f = |p: &WalkPath| p.sup_norm() as f64;
        for prop in [Proposal::RangePenalty { beta: 0.5 }, Proposal::Confined { theta: 0.2 }] {
            let mut rng = substream(21, 0);
            let mut acc = MeanVar::new();
            for _ in 0..n {
                let (p, lr) = prop.sample(&k, t, &mut rng);
                acc.push(lr.exp() * f(&p));
            }
            let mut free = MeanVar::new();
            for _ in 0..n {
                free.push(f(&WalkPath::sample(&k, Site::ORIGIN, t, &mut rng)));
            }
            let z = (acc.mean - free.mean).abs() / acc.std_error().hypot(free.std_error());
            assert!(z < 4.0, "{prop:?}: {} vs {} (z = {z})", acc.mean, free.mean);
        }
    }

    #[test]
    fn range_weight_equals_extent_weight() {
        let params = ModelParams::simple(1, KillRate::Hard, 1.0, 1.0, 1.0).unwrap();
        let bank = YBank::sample(&params.traps, 30.0, 50, 5);
        let mut rng = substream(5, 5);
        let mut scratch = PairScratch::default();
        for _ in 0..20 {
            let x = WalkPath::sample(&params.walker, Site::ORIGIN, 30.0, &mut rng);
            for y in bank.paths() {
                let r = InnerStatistic::Range.eval(y, &x, &mut scratch);
                let (hi, lo) = difference_path(y, &x).unwrap().running_extrema().unwrap();
                assert_eq!(r, f64::from(hi - lo + 1));
            }
        }
    }

    #[test]
    fn zero_density_gives_free_law() {
        let params = ModelParams::simple(1, KillRate::Hard, 1.0, 1.0, 0.0).unwrap();
        let e = sample_gibbs_ensemble(&params, 10.0, 500, 10, Proposal::Free, 3).unwrap();
        assert!((e.n_eff - 500.0).abs() < 1e-9);
        let r = fluctuation_report(&e, 0.0, 10.0).unwrap();
        assert!(r.window_probability > 0.99);
        for w in r.quantiles.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
    }
}
