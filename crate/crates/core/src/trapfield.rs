//! Poisson trap fields on a certified finite window.
//!
//! At time 0 each site of Z^d carries an independent Poisson(ν) number of
//! traps, and every trap then performs an independent walk. Only traps
//! starting inside a window of sup-norm radius `R` are materialized; `R` is
//! chosen from a Chernoff bound so that the expected number of outside traps
//! that ever reach the walker's ball is below a stated error `ε`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::KillRate;
use crate::walk::{collision_time_until, JumpKernel, PathRecord, Site, WalkPath};

/// Schema version of the field snapshot record.
pub const FIELD_SCHEMA_VERSION: u32 = 1;

const LAMBDA_GRID: usize = 400;

/// Chernoff exponents `(λ, rate·t·(M(λ) - 1))` on a geometric λ grid.
struct ChernoffTable {
    dim: usize,
    grid: Vec<(f64, f64)>,
}

impl ChernoffTable {
    fn new(kernel: &JumpKernel, t: f64) -> Self {
        let mean_jumps = kernel.rate() * t;
        let grid = if mean_jumps == 0.0 {
            Vec::new()
        } else {
            (0..LAMBDA_GRID)
                .map(|i| {
                    // geometric grid on [1e-3, 50]
                    let lambda = 1e-3 * (5e4f64).powf(i as f64 / (LAMBDA_GRID - 1) as f64);
                    (lambda, mean_jumps * (kernel.coordinate_log_mgf(lambda).exp() - 1.0))
                })
                .collect()
        };
        Self { dim: kernel.dim(), grid }
    }

    fn bound(&self, k: i64) -> f64 {
        if k <= 0 {
            return 1.0;
        }
        if self.grid.is_empty() {
            return 0.0;
        }
        let k = k as f64;
        let best = self
            .grid
            .iter()
            .map(|&(lambda, c)| -lambda * k + c)
            .fold(f64::INFINITY, f64::min);
        ((2 * self.dim) as f64 * best.exp()).min(1.0)
    }
}

/// Chernoff bound on `P(sup_{s<=t} |Y_s - Y_0|_∞ >= k)` for one walk.
///
/// Each signed coordinate `±Y_i(s) - s·rate·(M(λ)-1)` exponentiated is a
/// martingale, so Doob's inequality gives
/// `2d · exp(-λk + rate·t·(M(λ) - 1))`, minimized over a fixed λ grid.
pub fn excursion_bound(kernel: &JumpKernel, t: f64, k: i64) -> f64 {
    if k <= 0 {
        return 1.0;
    }
    ChernoffTable::new(kernel, t).bound(k)
}

/// Smallest `r` such that a walk with this kernel leaves the sup-norm ball
/// of radius `r` before time `t` with probability below `eps`.
pub fn walk_reach(kernel: &JumpKernel, t: f64, eps: f64) -> i64 {
    let table = ChernoffTable::new(kernel, t);
    let mut r = 0;
    while table.bound(r + 1) >= eps {
        r += 1;
    }
    r
}

/// Number of sites of Z^d at sup-norm exactly `r`.
fn shell_size(dim: usize, r: i64) -> f64 {
    if r == 0 {
        1.0
    } else {
        ((2 * r + 1) as f64).powi(dim as i32) - ((2 * r - 1) as f64).powi(dim as i32)
    }
}

/// Expected intruders from the shell at sup-norm `r`.
fn shell_term(table: &ChernoffTable, density: f64, walker_reach: i64, r: i64) -> f64 {
    density * shell_size(table.dim, r) * table.bound(r - walker_reach)
}

/// Expected number of traps starting outside radius `radius` that reach the
/// ball of radius `walker_reach` before time `t` (Chernoff upper bound).
pub fn intruder_bound(
    trap_kernel: &JumpKernel,
    density: f64,
    t: f64,
    walker_reach: i64,
    radius: i64,
) -> f64 {
    let table = ChernoffTable::new(trap_kernel, t);
    let mut total = 0.0;
    let mut r = radius.max(walker_reach) + 1;
    loop {
        let term = shell_term(&table, density, walker_reach, r);
        total += term;
        if term < 1e-300 || (term < total * 1e-17 && r > radius + 8) {
            break;
        }
        r += 1;
    }
    total
}

/// Minimal window radius certifying that fewer than `eps` traps (in
/// expectation) from outside the window ever touch the walker's ball.
pub fn truncation_radius(
    trap_kernel: &JumpKernel,
    density: f64,
    t: f64,
    walker_reach: i64,
    eps: f64,
) -> Result<i64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::param("epsilon", format!("{eps} not in (0, 1)")));
    }
    if trap_kernel.rate() == 0.0 || t == 0.0 || density == 0.0 {
        return Ok(walker_reach);
    }
    let table = ChernoffTable::new(trap_kernel, t);
    // shell terms from walker_reach + 1 outward until negligible against eps
    let mut terms = Vec::new();
    let mut r = walker_reach + 1;
    loop {
        let term = shell_term(&table, density, walker_reach, r);
        terms.push(term);
        if term < eps * 1e-17 && terms.len() > 8 {
            break;
        }
        r += 1;
    }
    // tail[i] bounds the intruders with radius = walker_reach + i
    let mut tail = 0.0;
    let mut radius = walker_reach + terms.len() as i64;
    for (i, term) in terms.iter().enumerate().rev() {
        tail += term;
        if tail >= eps {
            break;
        }
        radius = walker_reach + i as i64;
    }
    Ok(radius)
}

/// Parameters of a mobile (ρ > 0) or immobile (ρ = 0) Poisson trap field.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapFieldSpec {
    trap_kernel: JumpKernel,
    density: f64,
    horizon: f64,
    walker_reach: i64,
    epsilon: f64,
    radius: i64,
}

impl TrapFieldSpec {
    /// Spec with the minimal certified window radius.
    pub fn new(
        trap_kernel: JumpKernel,
        density: f64,
        horizon: f64,
        walker_reach: i64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(density >= 0.0 && density.is_finite()) {
            return Err(Error::param("density", format!("{density} must be finite and >= 0")));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::param("horizon", format!("{horizon} must be finite and >= 0")));
        }
        if walker_reach < 0 {
            return Err(Error::param("walker_reach", "must be >= 0"));
        }
        let radius = truncation_radius(&trap_kernel, density, horizon, walker_reach, epsilon)?;
        Ok(Self {
            trap_kernel,
            density,
            horizon,
            walker_reach,
            epsilon,
            radius,
        })
    }

    /// Same spec with an explicit (larger) window radius.
    pub fn with_radius(&self, radius: i64) -> Result<Self> {
        if radius < self.minimal_radius() {
            return Err(Error::param(
                "radius",
                format!("{radius} below the certified minimum {}", self.minimal_radius()),
            ));
        }
        Ok(Self {
            radius,
            ..self.clone()
        })
    }

    fn minimal_radius(&self) -> i64 {
        truncation_radius(
            &self.trap_kernel,
            self.density,
            self.horizon,
            self.walker_reach,
            self.epsilon,
        )
        .expect("validated epsilon")
    }

    pub fn dim(&self) -> usize {
        self.trap_kernel.dim()
    }

    pub fn trap_kernel(&self) -> &JumpKernel {
        &self.trap_kernel
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn walker_reach(&self) -> i64 {
        self.walker_reach
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn is_immobile(&self) -> bool {
        self.trap_kernel.rate() == 0.0
    }

    /// Number of sites in the window.
    pub fn window_size(&self) -> usize {
        ((2 * self.radius + 1) as usize).pow(self.dim() as u32)
    }
}

/// Iterate the sites of the sup-norm ball of radius `r` in lexicographic order.
pub fn box_sites(dim: usize, r: i64) -> impl Iterator<Item = Site> {
    let side = (2 * r + 1) as usize;
    let total = side.pow(dim as u32);
    (0..total).map(move |mut idx| {
        let mut c = [0i32; crate::walk::MAX_DIM];
        for coord in c.iter_mut().take(dim).rev() {
            *coord = (idx % side) as i32 - r as i32;
            idx /= side;
        }
        Site(c)
    })
}

/// Poisson variate: inversion for small means, the `rand_distr` rejection
/// sampler otherwise.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 30.0 {
        let u: f64 = rng.random();
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut k = 0u32;
        while u > cdf && p > 0.0 {
            k += 1;
            p *= mean / f64::from(k);
            cdf += p;
        }
        k
    } else {
        Poisson::new(mean).expect("positive mean").sample(rng) as u32
    }
}

/// A realized trap field: one trajectory per trap started inside the window.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapField {
    spec: TrapFieldSpec,
    trajectories: Vec<WalkPath>,
    counts_at_zero: BTreeMap<Site, u32>,
}

/// Result of integrating the trap occupation along a walker path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    /// `∫_0^t ξ(s, X(s)) ds`.
    pub exposure: f64,
    /// Whether the walker shared a site with a trap for positive time.
    pub hit: bool,
}

impl Interaction {
    /// Log survival weight of the walker under killing rate `gamma`.
    pub fn log_weight(&self, gamma: KillRate) -> f64 {
        gamma.log_weight(self.exposure)
    }
}

impl TrapField {
    /// Sample the field: Poisson counts per window site, then independent
    /// trajectories from each trap's starting site.
    pub fn sample<R: Rng + ?Sized>(spec: &TrapFieldSpec, rng: &mut R) -> TrapField {
        let mut trajectories = Vec::new();
        let mut counts_at_zero = BTreeMap::new();
        for site in box_sites(spec.dim(), spec.radius) {
            let n = sample_poisson(spec.density, rng);
            if n == 0 {
                continue;
            }
            counts_at_zero.insert(site, n);
            for _ in 0..n {
                trajectories.push(WalkPath::sample(&spec.trap_kernel, site, spec.horizon, rng));
            }
        }
        TrapField {
            spec: spec.clone(),
            trajectories,
            counts_at_zero,
        }
    }

    /// Field from explicit trajectories (all must start inside the window and
    /// share the horizon of `spec`).
    pub fn from_trajectories(spec: &TrapFieldSpec, trajectories: Vec<WalkPath>) -> Result<TrapField> {
        let mut counts_at_zero = BTreeMap::new();
        for p in &trajectories {
            if p.dim() != spec.dim() {
                return Err(Error::DimensionMismatch {
                    expected: spec.dim(),
                    found: p.dim(),
                });
            }
            if p.horizon() != spec.horizon {
                return Err(Error::HorizonMismatch {
                    a: spec.horizon,
                    b: p.horizon(),
                });
            }
            if p.origin().sup_norm() > spec.radius {
                return Err(Error::OutsideWindow {
                    site: p.origin().coords(spec.dim()).to_vec(),
                    radius: spec.radius,
                });
            }
            *counts_at_zero.entry(p.origin()).or_insert(0) += 1;
        }
        Ok(TrapField {
            spec: spec.clone(),
            trajectories,
            counts_at_zero,
        })
    }

    pub fn spec(&self) -> &TrapFieldSpec {
        &self.spec
    }

    pub fn trajectories(&self) -> &[WalkPath] {
        &self.trajectories
    }

    pub fn trap_count(&self) -> usize {
        self.trajectories.len()
    }

    /// Initial trap count at `site` (0 if empty).
    pub fn count_at_zero(&self, site: Site) -> u32 {
        self.counts_at_zero.get(&site).copied().unwrap_or(0)
    }

    pub fn counts_at_zero(&self) -> &BTreeMap<Site, u32> {
        &self.counts_at_zero
    }

    fn check_site(&self, x: Site) -> Result<()> {
        if x.sup_norm() > self.spec.radius {
            return Err(Error::OutsideWindow {
                site: x.coords(self.spec.dim()).to_vec(),
                radius: self.spec.radius,
            });
        }
        Ok(())
    }

    /// `ξ(s, x)`: number of traps at `x` at time `s`.
    pub fn occupation(&self, s: f64, x: Site) -> Result<u32> {
        if !(0.0..=self.spec.horizon).contains(&s) {
            return Err(Error::TimeOutOfRange {
                time: s,
                horizon: self.spec.horizon,
            });
        }
        self.check_site(x)?;
        Ok(self
            .trajectories
            .iter()
            .filter(|p| p.position_at(s) == x)
            .count() as u32)
    }

    /// Occupation counts of the whole sup-norm box of radius `r <= R` at
    /// time `s`, in [`box_sites`] order.
    pub fn occupation_grid(&self, s: f64, r: i64) -> Result<Vec<u32>> {
        if r > self.spec.radius {
            return Err(Error::OutsideWindow {
                site: vec![r as i32],
                radius: self.spec.radius,
            });
        }
        let dim = self.spec.dim();
        let side = (2 * r + 1) as usize;
        let mut grid = vec![0u32; side.pow(dim as u32)];
        for p in &self.trajectories {
            let x = p.position_at(s);
            if x.sup_norm() <= r {
                grid[box_index(x, dim, r)] += 1;
            }
        }
        Ok(grid)
    }

    fn check_walker(&self, x_path: &WalkPath) -> Result<()> {
        if x_path.dim() != self.spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dim(),
                found: x_path.dim(),
            });
        }
        if x_path.horizon() > self.spec.horizon {
            return Err(Error::HorizonMismatch {
                a: self.spec.horizon,
                b: x_path.horizon(),
            });
        }
        if x_path.sup_norm() > self.spec.walker_reach {
            return Err(Error::WalkEscaped {
                reached: x_path.sup_norm(),
                reach: self.spec.walker_reach,
            });
        }
        Ok(())
    }

    /// Exact `∫_0^t ξ(s, X(s)) ds` over the walker's horizon `t` (which may be
    /// shorter than the field horizon).
    pub fn interaction_integral(&self, x_path: &WalkPath) -> Result<Interaction> {
        self.check_walker(x_path)?;
        let t = x_path.horizon();
        let mut exposure = crate::stats::CompensatedSum::new();
        for trap in &self.trajectories {
            exposure.add(collision_time_until(trap, x_path, t));
        }
        let exposure = exposure.value();
        Ok(Interaction {
            exposure,
            hit: exposure > 0.0,
        })
    }

    /// Whether any trap meets the walker for positive time; stops at the
    /// first such trap.
    pub fn is_hit(&self, x_path: &WalkPath) -> Result<bool> {
        self.check_walker(x_path)?;
        let t = x_path.horizon();
        Ok(self
            .trajectories
            .iter()
            .any(|trap| collision_time_until(trap, x_path, t) > 0.0))
    }

    /// The field on `[from, to]`, shifted to start at time 0.
    pub fn segment(&self, from: f64, to: f64) -> Result<TrapField> {
        let trajectories = self
            .trajectories
            .iter()
            .map(|p| p.segment(from, to))
            .collect::<Result<Vec<_>>>()?;
        let mut counts_at_zero = BTreeMap::new();
        for p in &trajectories {
            *counts_at_zero.entry(p.origin()).or_insert(0) += 1;
        }
        let spec = TrapFieldSpec {
            horizon: to - from,
            ..self.spec.clone()
        };
        Ok(TrapField {
            spec,
            trajectories,
            counts_at_zero,
        })
    }

    pub fn to_snapshot(&self) -> FieldSnapshot {
        FieldSnapshot {
            schema_version: FIELD_SCHEMA_VERSION,
            d: self.spec.dim(),
            density: self.spec.density,
            rho: self.spec.trap_kernel.rate(),
            horizon: self.spec.horizon,
            radius: self.spec.radius,
            walker_reach: self.spec.walker_reach,
            epsilon: self.spec.epsilon,
            initial_counts: self
                .counts_at_zero
                .iter()
                .map(|(s, n)| (s.coords(self.spec.dim()).to_vec(), *n))
                .collect(),
            trajectories: self.trajectories.iter().map(WalkPath::to_record).collect(),
        }
    }
}

/// Linear index of `x` in the sup-norm box of radius `r` ([`box_sites`] order).
#[inline]
pub fn box_index(x: Site, dim: usize, r: i64) -> usize {
    let side = (2 * r + 1) as usize;
    let mut idx = 0usize;
    for i in 0..dim {
        idx = idx * side + (i64::from(x.0[i]) + r) as usize;
    }
    idx
}

/// Exported field: initial counts plus trajectory records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSnapshot {
    pub schema_version: u32,
    pub d: usize,
    pub density: f64,
    pub rho: f64,
    pub horizon: f64,
    pub radius: i64,
    pub walker_reach: i64,
    pub epsilon: f64,
    pub initial_counts: Vec<(Vec<i32>, u32)>,
    pub trajectories: Vec<PathRecord>,
}

/// Law of an i.i.d. immobile potential `ξ(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialLaw {
    /// Hard traps: `ξ = 0` with probability `p`, `ξ = ∞` otherwise.
    Bernoulli { p: f64 },
    /// `ξ ~ Poisson(ν)`.
    IidPoisson { nu: f64 },
    /// `ξ ~ Exponential(mean)`.
    Exponential { mean: f64 },
    /// `ξ ~ Uniform[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl PotentialLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PotentialLaw::Bernoulli { p } if !(p > 0.0 && p < 1.0) && p != 0.0 && p != 1.0 => {
                Err(Error::param("p", format!("{p} not in [0, 1]")))
            }
            PotentialLaw::IidPoisson { nu } if !(nu >= 0.0 && nu.is_finite()) => {
                Err(Error::param("nu", format!("{nu} must be >= 0")))
            }
            PotentialLaw::Exponential { mean } if !(mean > 0.0 && mean.is_finite()) => {
                Err(Error::param("mean", format!("{mean} must be > 0")))
            }
            PotentialLaw::Uniform { lo, hi } if !(0.0 <= lo && lo < hi && hi.is_finite()) => {
                Err(Error::param("uniform", format!("need 0 <= lo < hi, got [{lo}, {hi}]")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PotentialLaw::Bernoulli { p } => {
                if Bernoulli::new(p).expect("validated").sample(rng) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            PotentialLaw::IidPoisson { nu } => f64::from(sample_poisson(nu, rng)),
            PotentialLaw::Exponential { mean } => {
                let e: f64 = rand_distr::Exp1.sample(rng);
                e * mean
            }
            PotentialLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// `H(s) = ln E[e^{-s ξ(0)}]`.
    ///
    /// Closed forms for the Poisson and hard-trap laws; the continuous laws
    /// go through adaptive Simpson quadrature of their densities.
    pub fn h_functional(&self, s: f64) -> f64 {
        assert!(s >= 0.0, "H is defined for s >= 0");
        if s == 0.0 {
            return 0.0;
        }
        match *self {
            PotentialLaw::Bernoulli { p } => p.ln(),
            PotentialLaw::IidPoisson { nu } => nu * ((-s).exp() - 1.0),
            PotentialLaw::Exponential { mean } => {
                // density e^{-x/mean}/mean; substitute x = mean·u on [0, ∞)
                let f = |u: f64| (-u * (1.0 + s * mean)).exp();
                let tail = 40.0 / (1.0 + s * mean);
                crate::stats::adaptive_simpson(&f, 0.0, tail, 1e-13).ln()
            }
            PotentialLaw::Uniform { lo, hi } => {
                let f = |x: f64| (-s * x).exp() / (hi - lo);
                crate::stats::adaptive_simpson(&f, lo, hi, 1e-13).ln()
            }
        }
    }
}

/// Specification of an immobile i.i.d. potential on a finite box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticPotentialSpec {
    pub law: PotentialLaw,
    pub dim: usize,
    pub radius: i64,
}

/// Realized i.i.d. potential on the sup-norm box of radius `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticPotential {
    dim: usize,
    radius: i64,
    values: Vec<f64>,
}

impl StaticPotential {
    pub fn sample<R: Rng + ?Sized>(spec: &StaticPotentialSpec, rng: &mut R) -> Result<Self> {
        spec.law.validate()?;
        let values = box_sites(spec.dim, spec.radius)
            .map(|_| spec.law.sample(rng))
            .collect();
        Ok(Self {
            dim: spec.dim,
            radius: spec.radius,
            values,
        })
    }

    /// Potential from explicit values in [`box_sites`] order.
    pub fn from_values(dim: usize, radius: i64, values: Vec<f64>) -> Result<Self> {
        if values.len() != ((2 * radius + 1) as usize).pow(dim as u32) {
            return Err(Error::param("values", "length does not match the box"));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::param("values", "potential must be >= 0"));
        }
        Ok(Self { dim, radius, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, x: Site) -> Result<f64> {
        if x.sup_norm() > self.radius {
            return Err(Error::OutsideWindow {
                site: x.coords(self.dim).to_vec(),
                radius: self.radius,
            });
        }
        Ok(self.values[box_index(x, self.dim, self.radius)])
    }

    /// `∫_0^t ξ(X(s)) ds` along a walker path inside the box.
    pub fn exposure(&self, x_path: &WalkPath) -> Result<f64> {
        if x_path.sup_norm() > self.radius {
            return Err(Error::WalkEscaped {
                reached: x_path.sup_norm(),
                reach: self.radius,
            });
        }
        let mut acc = crate::stats::CompensatedSum::new();
        for (site, l) in x_path.local_times() {
            if l > 0.0 {
                acc.add(self.values[box_index(site, self.dim, self.radius)] * l);
            }
        }
        Ok(acc.value())
    }
}
