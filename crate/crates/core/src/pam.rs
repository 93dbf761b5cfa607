//! Explicit finite-box integrators for the parabolic Anderson model
//! `∂u = κΔu − γξu` and the single-walker trap equation
//! `∂v = L̃v − γ δ_{X(t)} v`, `v(0) = 1`.
//!
//! Substeps are aligned with every event where the right-hand side changes
//! (walker jumps, trap jumps, snapshot times), so on each substep the
//! operator is constant and the moving point potential is never smeared.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KillRate, ModelParams};
use crate::parallel::{derive_seed, map_reduce, DEFAULT_CHUNKS};
use crate::stats::{CompensatedSum, MeanVar};
use crate::survival::{EstimatorTag, SurvivalEstimate};
use crate::trapfield::{box_index, box_sites, walk_reach, StaticPotential, TrapField, TrapFieldSpec};
use crate::walk::{JumpKernel, Site, WalkPath};

/// Values assumed outside the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Clamped to 1 outside the box.
    DirichletOne,
    /// Clamped to 0 outside the box.
    DirichletZero,
    /// The box is a discrete torus.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExplicitEuler,
    Rk4,
}

impl Scheme {
    /// Largest admissible `dt · (2·rate + max potential)`; for Euler the
    /// positivity bound `dt · (rate + max potential) <= 1` is used instead.
    fn admissible(&self, dt: f64, rate: f64, max_potential: f64) -> (bool, f64) {
        match self {
            Scheme::ExplicitEuler => {
                let load = rate + max_potential;
                (dt * load <= 1.0, 1.0 / load)
            }
            Scheme::Rk4 => {
                let load = 2.0 * rate + max_potential;
                (dt * load <= 2.5, 2.5 / load)
            }
        }
    }
}

/// Step size, scheme and box for one integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub radius: i64,
    pub boundary: Boundary,
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

impl IntegratorConfig {
    pub fn new(dt: f64, scheme: Scheme, radius: i64, boundary: Boundary) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("{dt} must be finite and > 0")));
        }
        if radius < 1 {
            return Err(Error::param("radius", format!("{radius} must be >= 1")));
        }
        Ok(Self {
            dt,
            scheme,
            radius,
            boundary,
            snapshots: Vec::new(),
        })
    }

    /// Also record the field at each of these times.
    pub fn with_snapshots(mut self, mut times: Vec<f64>) -> Self {
        times.sort_by(f64::total_cmp);
        self.snapshots = times;
        self
    }

    /// Fails when `dt` violates the explicit stability rule for a jump
    /// rate `rate` and a largest potential `max_potential`.
    pub fn check_stability(&self, rate: f64, max_potential: f64) -> Result<()> {
        if max_potential.is_infinite() {
            return Err(Error::Unstable {
                dt: self.dt,
                bound: 0.0,
            });
        }
        let (ok, bound) = self.scheme.admissible(self.dt, rate, max_potential);
        if ok {
            Ok(())
        } else {
            Err(Error::Unstable { dt: self.dt, bound })
        }
    }
}

/// Real function on the sup-norm box of radius `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    dim: usize,
    radius: i64,
    boundary: Boundary,
    time: f64,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn constant(dim: usize, radius: i64, boundary: Boundary, value: f64) -> Self {
        Self {
            dim,
            radius,
            boundary,
            time: 0.0,
            values: vec![value; ((2 * radius + 1) as usize).pow(dim as u32)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Values in [`box_sites`] order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at `x`, with the boundary rule applied outside the box.
    pub fn value(&self, x: Site) -> f64 {
        if x.sup_norm() <= self.radius {
            return self.values[box_index(x, self.dim, self.radius)];
        }
        match self.boundary {
            Boundary::DirichletOne => 1.0,
            Boundary::DirichletZero => 0.0,
            Boundary::Periodic => {
                let side = 2 * self.radius + 1;
                let mut c = [0i32; crate::walk::MAX_DIM];
                for (i, ci) in c.iter_mut().enumerate().take(self.dim) {
                    *ci = ((i64::from(x.0[i]) + self.radius).rem_euclid(side) - self.radius) as i32;
                }
                self.values[box_index(Site(c), self.dim, self.radius)]
            }
        }
    }

    /// `Σ_y (value(y) − 1)` over the box.
    pub fn deficit(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        for v in &self.values {
            acc.add(v - 1.0);
        }
        acc.value()
    }

    /// Write `x1,..,xd,value` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        writeln!(out, "{},value", header.join(","))?;
        for (site, v) in box_sites(self.dim, self.radius).zip(&self.values) {
            let coords: Vec<String> = site.coords(self.dim).iter().map(i32::to_string).collect();
            writeln!(out, "{},{v:e}", coords.join(","))?;
        }
        Ok(())
    }
}

const OUTSIDE: u32 = u32::MAX;

/// Neighbour table of a jump kernel on the box.
struct Stencil {
    n: usize,
    probs: Vec<f64>,
    neighbours: Vec<u32>,
    rate: f64,
    outside: f64,
}

impl Stencil {
    fn new(kernel: &JumpKernel, radius: i64, boundary: Boundary) -> Stencil {
        let dim = kernel.dim();
        let side = 2 * radius + 1;
        let m = kernel.support().len();
        let sites: Vec<Site> = box_sites(dim, radius).collect();
        let mut neighbours = Vec::with_capacity(sites.len() * m);
        for &x in &sites {
            for &(z, _) in kernel.support() {
                let mut y = x + z;
                if y.sup_norm() > radius {
                    if boundary == Boundary::Periodic {
                        for c in y.0.iter_mut().take(dim) {
                            *c = ((i64::from(*c) + radius).rem_euclid(side) - radius) as i32;
                        }
                    } else {
                        neighbours.push(OUTSIDE);
                        continue;
                    }
                }
                neighbours.push(box_index(y, dim, radius) as u32);
            }
        }
        Stencil {
            n: sites.len(),
            probs: kernel.support().iter().map(|(_, p)| *p).collect(),
            neighbours,
            rate: kernel.rate(),
            outside: if boundary == Boundary::DirichletOne { 1.0 } else { 0.0 },
        }
    }

    /// `out = L v − diag·v`; returns the probability flux entering from
    /// outside the box, `Σ_i rate Σ_{out} p (outside − v_i)`.
    fn apply(&self, v: &[f64], out: &mut [f64], diag: Diag<'_>) -> f64 {
        let m = self.probs.len();
        let mut flux = 0.0;
        for i in 0..self.n {
            let vi = v[i];
            let mut acc = 0.0;
            let mut edge = 0.0;
            for k in 0..m {
                let j = self.neighbours[i * m + k];
                if j == OUTSIDE {
                    edge += self.probs[k] * (self.outside - vi);
                } else {
                    acc += self.probs[k] * (v[j as usize] - vi);
                }
            }
            out[i] = self.rate * (acc + edge);
            flux += self.rate * edge;
        }
        match diag {
            Diag::Point(i, g) => out[i] -= g * v[i],
            Diag::Dense(d) => {
                for i in 0..self.n {
                    out[i] -= d[i] * v[i];
                }
            }
        }
        flux
    }
}

#[derive(Clone, Copy)]
enum Diag<'a> {
    Point(usize, f64),
    Dense(&'a [f64]),
}

#[derive(Default)]
struct Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

/// Advance `y` by `steps` substeps of length `h` of `y' = f(y)`.
fn advance<F: FnMut(&[f64], &mut [f64])>(
    scheme: Scheme,
    y: &mut [f64],
    h: f64,
    steps: usize,
    mut f: F,
    s: &mut Scratch,
) {
    let n = y.len();
    for buf in [&mut s.k1, &mut s.k2, &mut s.k3, &mut s.k4, &mut s.tmp] {
        buf.resize(n, 0.0);
    }
    for _ in 0..steps {
        match scheme {
            Scheme::ExplicitEuler => {
                f(y, &mut s.k1);
                for i in 0..n {
                    y[i] += h * s.k1[i];
                }
            }
            Scheme::Rk4 => {
                f(y, &mut s.k1);
                for i in 0..n {
                    s.tmp[i] = y[i] + 0.5 * h * s.k1[i];
                }
                f(&s.tmp, &mut s.k2);
                for i in 0..n {
                    s.tmp[i] = y[i] + 0.5 * h * s.k2[i];
                }
                f(&s.tmp, &mut s.k3);
                for i in 0..n {
                    s.tmp[i] = y[i] + h * s.k3[i];
                }
                f(&s.tmp, &mut s.k4);
                for i in 0..n {
                    y[i] += h / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
                }
            }
        }
    }
}

/// Number of equal substeps of length at most `dt` covering `len`.
fn substeps(len: f64, dt: f64) -> usize {
    ((len / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Sorted, deduplicated breakpoints in `(0, t)` merged with `t`.
fn breakpoints(mut times: Vec<f64>, t: f64) -> Vec<f64> {
    times.retain(|&s| s > 0.0 && s < t);
    times.push(t);
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// Output of [`solve_v_x`].
#[derive(Debug, Clone, PartialEq)]
pub struct VxSolution {
    /// `v(t, ·)` on the box.
    pub field: LatticeField,
    /// `Σ_X(t) = Σ_y (v(t, y) − 1)`.
    pub sigma: f64,
    /// `∫_0^t v(s, X(s)) ds`, integrated with the same scheme.
    pub integral: f64,
    /// Integrated probability flux through the Dirichlet-1 boundary.
    pub boundary_flux: f64,
    /// Fields at the configured snapshot times.
    pub snapshots: Vec<LatticeField>,
}

impl VxSolution {
    /// `Σ_X(t) + γ ∫ v(s, X(s)) ds`; zero for the infinite lattice.
    pub fn identity_residual(&self, gamma: f64) -> f64 {
        self.sigma + gamma * self.integral
    }

    /// Log of the walker's annealed weight `exp(−ν γ ∫ v(s, X(s)) ds)`.
    pub fn log_weight(&self, gamma: f64, nu: f64) -> f64 {
        -nu * gamma * self.integral
    }
}

/// Integrate the trap equation along `x_path` with Dirichlet-1 boundary.
///
/// The trap kernel must be symmetric, so that the reversed-trap generator
/// coincides with the forward one.
pub fn solve_v_x(
    x_path: &WalkPath,
    gamma: f64,
    trap_kernel: &JumpKernel,
    cfg: &IntegratorConfig,
) -> Result<VxSolution> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", "the PDE route needs a finite gamma >= 0"));
    }
    if !trap_kernel.is_symmetric() {
        return Err(Error::NonSymmetricKernel);
    }
    if trap_kernel.dim() != x_path.dim() {
        return Err(Error::DimensionMismatch {
            expected: trap_kernel.dim(),
            found: x_path.dim(),
        });
    }
    if cfg.boundary != Boundary::DirichletOne {
        return Err(Error::Unsupported("v_X is defined with a Dirichlet-1 boundary".into()));
    }
    let margin = cfg.radius - trap_kernel.max_step();
    if x_path.sup_norm() > margin {
        return Err(Error::WalkEscaped {
            reached: x_path.sup_norm(),
            reach: margin,
        });
    }
    cfg.check_stability(trap_kernel.rate(), gamma)?;

    let dim = x_path.dim();
    let stencil = Stencil::new(trap_kernel, cfg.radius, cfg.boundary);
    let n = stencil.n;
    // state: v (n sites), ∫v(s,X(s))ds, boundary flux
    let mut y = vec![1.0; n + 2];
    y[n] = 0.0;
    y[n + 1] = 0.0;
    let t = x_path.horizon();
    let mut events: Vec<f64> = x_path.jump_times().to_vec();
    events.extend(cfg.snapshots.iter().copied().filter(|&s| s <= t));
    let stops = breakpoints(events, t);
    let mut snaps = cfg.snapshots.iter().copied().filter(|&s| s <= t).peekable();
    let mut snapshots = Vec::new();
    let mut scratch = Scratch::default();
    let mut now = 0.0;
    let field_at = |y: &[f64], time: f64| LatticeField {
        dim,
        radius: cfg.radius,
        boundary: cfg.boundary,
        time,
        values: y[..n].to_vec(),
    };
    while snaps.peek() == Some(&0.0) {
        snaps.next();
        snapshots.push(field_at(&y, 0.0));
    }
    for &stop in &stops {
        let xi = box_index(x_path.position_at(now), dim, cfg.radius);
        let len = stop - now;
        let steps = substeps(len, cfg.dt);
        advance(
            cfg.scheme,
            &mut y,
            len / steps as f64,
            steps,
            |state, out| {
                let flux = stencil.apply(&state[..n], &mut out[..n], Diag::Point(xi, gamma));
                out[n] = state[xi];
                out[n + 1] = flux;
            },
            &mut scratch,
        );
        now = stop;
        while snaps.peek().is_some_and(|&s| s <= now) {
            snaps.next();
            snapshots.push(field_at(&y, now));
        }
    }
    let field = field_at(&y, t);
    Ok(VxSolution {
        sigma: field.deficit(),
        integral: y[n],
        boundary_flux: y[n + 1],
        field,
        snapshots,
    })
}

/// Potential driving [`solve_pam`].
#[derive(Debug, Clone, Copy)]
pub enum Potential<'a> {
    /// Time-dependent trap occupation `ξ(s, x)`.
    Field(&'a TrapField),
    /// `ξ(t − s, x)`; then `u(t, 0)` is the quenched survival probability
    /// `Z^ξ_t` of a walker started at the origin at time 0.
    FieldReversed(&'a TrapField),
    /// Immobile potential `ξ(x)`.
    Static(&'a StaticPotential),
    /// `ξ ≡ 0`.
    Zero,
}

/// Output of [`solve_pam`].
#[derive(Debug, Clone, PartialEq)]
pub struct PamSolution {
    pub field: LatticeField,
    pub snapshots: Vec<LatticeField>,
}

impl PamSolution {
    /// `u(t, 0)`.
    pub fn at_origin(&self) -> f64 {
        self.field.value(Site::ORIGIN)
    }
}

/// Integrate `∂u = κΔu − γ ξ(s, x) u`, `u(0) = 1`, on the configured box.
pub fn solve_pam(
    potential: Potential<'_>,
    walker: &JumpKernel,
    gamma: f64,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<PamSolution> {
    solve_pam_inner(potential, walker, gamma, t, cfg, None)
}

/// [`solve_pam`] from an explicit initial condition given in box order.
pub fn solve_pam_from(
    potential: Potential<'_>,
    walker: &JumpKernel,
    gamma: f64,
    t: f64,
    cfg: &IntegratorConfig,
    initial: &[f64],
) -> Result<PamSolution> {
    solve_pam_inner(potential, walker, gamma, t, cfg, Some(initial))
}

/// `Z^ξ_t` at every grid time from one forward solve: the sub-probability
/// mass of a walker started at the origin, killed at rate `γ ξ(s, x)` and
/// absorbed outside the box.
pub fn quenched_mass(
    field: &TrapField,
    walker: &JumpKernel,
    gamma: f64,
    t_grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    if !walker.is_symmetric() {
        return Err(Error::NonSymmetricKernel);
    }
    if cfg.boundary != Boundary::DirichletZero {
        return Err(Error::param("boundary", "the mass solve needs a zero boundary"));
    }
    let t_max = t_grid.iter().copied().fold(0.0, f64::max);
    let dim = walker.dim();
    let mut initial = vec![0.0; box_sites(dim, cfg.radius).count()];
    initial[box_index(Site::ORIGIN, dim, cfg.radius)] = 1.0;
    let cfg = cfg.clone().with_snapshots(t_grid.to_vec());
    let sol = solve_pam_from(Potential::Field(field), walker, gamma, t_max, &cfg, &initial)?;
    let mut masses: Vec<(f64, f64)> = sol
        .snapshots
        .iter()
        .map(|f| (f.time(), f.values().iter().sum()))
        .collect();
    masses.dedup_by(|a, b| a.0 == b.0);
    Ok(t_grid
        .iter()
        .map(|t| masses.iter().find(|m| m.0 == *t).map_or(f64::NAN, |m| m.1))
        .collect())
}

fn solve_pam_inner(
    potential: Potential<'_>,
    walker: &JumpKernel,
    gamma: f64,
    t: f64,
    cfg: &IntegratorConfig,
    initial: Option<&[f64]>,
) -> Result<PamSolution> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", "the PAM integrator needs a finite gamma >= 0"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("{t} must be finite and >= 0")));
    }
    let dim = walker.dim();
    let stencil = Stencil::new(walker, cfg.radius, cfg.boundary);
    let n = stencil.n;

    // Trap moves inside the box, sorted by time: (time, from, to).
    let mut moves: Vec<(f64, Option<usize>, Option<usize>)> = Vec::new();
    let mut grid = vec![0.0; n];
    match potential {
        Potential::Zero => {}
        Potential::Static(p) => {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
            if p.radius() < cfg.radius {
                return Err(Error::OutsideWindow {
                    site: vec![cfg.radius as i32],
                    radius: p.radius(),
                });
            }
            for (i, x) in box_sites(dim, cfg.radius).enumerate() {
                grid[i] = p.value(x)?;
            }
        }
        Potential::Field(f) | Potential::FieldReversed(f) => {
            if f.spec().dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: f.spec().dim(),
                });
            }
            if f.spec().radius() < cfg.radius {
                return Err(Error::OutsideWindow {
                    site: vec![cfg.radius as i32],
                    radius: f.spec().radius(),
                });
            }
            if f.spec().horizon() < t {
                return Err(Error::HorizonMismatch {
                    a: f.spec().horizon(),
                    b: t,
                });
            }
            let reversed = matches!(potential, Potential::FieldReversed(_));
            let inside = |s: Site| (s.sup_norm() <= cfg.radius).then(|| box_index(s, dim, cfg.radius));
            for traj in f.trajectories() {
                let start = if reversed { traj.position_at(t) } else { traj.origin() };
                if let Some(i) = inside(start) {
                    grid[i] += 1.0;
                }
                let pos = traj.positions();
                for (k, &s) in traj.jump_times().iter().enumerate() {
                    if s >= t {
                        break;
                    }
                    let (from, to) = (inside(pos[k]), inside(pos[k + 1]));
                    if from.is_some() || to.is_some() {
                        moves.push(if reversed { (t - s, to, from) } else { (s, from, to) });
                    }
                }
            }
            moves.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
    }
    let max_count = match potential {
        Potential::Field(_) | Potential::FieldReversed(_) => {
            // upper bound on the occupation of any site over the run
            let mut g = grid.clone();
            let mut m = g.iter().copied().fold(0.0, f64::max);
            for &(_, from, to) in &moves {
                if let Some(i) = from {
                    g[i] -= 1.0;
                }
                if let Some(j) = to {
                    g[j] += 1.0;
                    m = m.max(g[j]);
                }
            }
            m
        }
        _ => grid.iter().copied().fold(0.0, f64::max),
    };
    cfg.check_stability(walker.rate(), gamma * max_count)?;

    let mut diag: Vec<f64> = grid.iter().map(|g| gamma * g).collect();
    let mut u = match initial {
        None => vec![1.0; n],
        Some(v) if v.len() == n => v.to_vec(),
        Some(v) => {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            })
        }
    };
    let mut events: Vec<f64> = moves.iter().map(|m| m.0).collect();
    events.extend(cfg.snapshots.iter().copied().filter(|&s| s <= t));
    let stops = breakpoints(events, t);
    let mut snaps = cfg.snapshots.iter().copied().filter(|&s| s <= t).peekable();
    let mut snapshots = Vec::new();
    let field_at = |u: &[f64], time: f64| LatticeField {
        dim,
        radius: cfg.radius,
        boundary: cfg.boundary,
        time,
        values: u.to_vec(),
    };
    while snaps.peek() == Some(&0.0) {
        snaps.next();
        snapshots.push(field_at(&u, 0.0));
    }
    let mut scratch = Scratch::default();
    let mut now = 0.0;
    let mut next_move = 0;
    if t > 0.0 {
        for &stop in &stops {
            let len = stop - now;
            let steps = substeps(len, cfg.dt);
            let d = &diag;
            advance(
                cfg.scheme,
                &mut u,
                len / steps as f64,
                steps,
                |state, out| {
                    stencil.apply(state, out, Diag::Dense(d));
                },
                &mut scratch,
            );
            now = stop;
            while next_move < moves.len() && moves[next_move].0 <= now {
                let (_, from, to) = moves[next_move];
                if let Some(i) = from {
                    diag[i] -= gamma;
                }
                if let Some(j) = to {
                    diag[j] += gamma;
                }
                next_move += 1;
            }
            while snaps.peek().is_some_and(|&s| s <= now) {
                snaps.next();
                snapshots.push(field_at(&u, now));
            }
        }
    }
    Ok(PamSolution {
        field: field_at(&u, t),
        snapshots,
    })
}

/// Default walker-reach error for PAM boxes.
pub const PAM_REACH_EPSILON: f64 = 1e-12;

/// Average of `u(t, 0)` over `n_fields` independent trap fields.
///
/// The box radius is the walker reach at error [`PAM_REACH_EPSILON`] unless
/// `cfg.radius` is larger; the field window is certified around it.
pub fn annealed_pam_average(
    params: &ModelParams,
    t: f64,
    n_fields: usize,
    cfg: &IntegratorConfig,
    seed: u64,
) -> Result<SurvivalEstimate> {
    if n_fields == 0 {
        return Err(Error::EmptyBudget("n_fields"));
    }
    let gamma = match params.gamma {
        KillRate::Finite(g) => g,
        KillRate::Hard => return Err(Error::param("gamma", "the PAM average needs a finite gamma")),
    };
    if !params.traps.is_symmetric() {
        return Err(Error::NonSymmetricKernel);
    }
    if params.nu == 0.0 || gamma == 0.0 || t == 0.0 {
        return Ok(SurvivalEstimate::exact_one(EstimatorTag::Pam, params, t, n_fields, seed));
    }
    let radius = cfg.radius.max(walk_reach(&params.walker, t, PAM_REACH_EPSILON));
    let cfg = IntegratorConfig {
        radius,
        boundary: Boundary::DirichletOne,
        ..cfg.clone()
    };
    let spec = TrapFieldSpec::new(params.traps.clone(), params.nu, t, radius, 1e-9)?;
    let stats = map_reduce(
        derive_seed(seed, 0x5041_4d),
        n_fields,
        DEFAULT_CHUNKS,
        |_, count, rng| -> Result<MeanVar> {
            let mut acc = MeanVar::new();
            for _ in 0..count {
                let field = TrapField::sample(&spec, rng);
                let sol = solve_pam(Potential::Field(&field), &params.walker, gamma, t, &cfg)?;
                acc.push(sol.at_origin());
            }
            Ok(acc)
        },
        |a, b| {
            if let (Ok(x), Ok(y)) = (a.as_mut(), b.as_ref()) {
                x.merge(y);
            } else if let Err(e) = b {
                *a = Err(e);
            }
        },
    )
    .expect("nonempty budget")?;
    Ok(SurvivalEstimate::from_mean_var(EstimatorTag::Pam, params, t, &stats, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::substream;
    use crate::trapfield::{PotentialLaw, StaticPotentialSpec};

    fn cfg(dt: f64, scheme: Scheme, radius: i64) -> IntegratorConfig {
        IntegratorConfig::new(dt, scheme, radius, Boundary::DirichletOne).unwrap()
    }

    #[test]
    fn gamma_zero_keeps_v_one() {
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let x = WalkPath::sample(&k, Site::ORIGIN, 3.0, &mut substream(1, 0));
        let sol = solve_v_x(&x, 0.0, &k, &cfg(0.01, Scheme::Rk4, 20)).unwrap();
        assert!(sol.field.values().iter().all(|v| *v == 1.0));
        assert_eq!(sol.sigma, 0.0);
    }

    #[test]
    fn immobile_traps_decouple() {
        let k = JumpKernel::simple(1, 0.0).unwrap();
        let x = WalkPath::constant(1, Site::ORIGIN, 2.0);
        let sol = solve_v_x(&x, 1.5, &k, &cfg(1e-3, Scheme::Rk4, 5)).unwrap();
        assert!((sol.field.value(Site::ORIGIN) - (-3.0f64).exp()).abs() < 1e-12);
        for y in box_sites(1, 5).filter(|y| !y.is_origin()) {
            assert_eq!(sol.field.value(y), 1.0);
        }
    }

    #[test]
    fn sigma_identity_holds() {
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let x = WalkPath::sample(&k, Site::ORIGIN, 10.0, &mut substream(2, 0));
        let sol = solve_v_x(&x, 1.0, &k, &cfg(1e-2, Scheme::Rk4, 60)).unwrap();
        assert!(sol.identity_residual(1.0).abs() < 1e-9);
        assert!(sol.boundary_flux.abs() < 1e-12);
        assert!(sol.field.values().iter().all(|v| *v > 0.0 && *v <= 1.0));
    }

    #[test]
    fn observed_order_matches_scheme() {
        let k = JumpKernel::simple(1, 0.0).unwrap();
        let x = WalkPath::constant(1, Site::ORIGIN, 1.0);
        let exact = (-2.0f64).exp() - 1.0;
        let err = |dt: f64, s: Scheme| {
            (solve_v_x(&x, 2.0, &k, &cfg(dt, s, 2)).unwrap().sigma - exact).abs()
        };
        let euler = (err(0.02, Scheme::ExplicitEuler) / err(0.01, Scheme::ExplicitEuler)).log2();
        let rk4 = (err(0.1, Scheme::Rk4) / err(0.05, Scheme::Rk4)).log2();
        assert!(euler >= 0.95, "euler order {euler}");
        assert!(rk4 >= 3.5, "rk4 order {rk4}");
    }

    #[test]
    fn stability_guard() {
        let k = JumpKernel::simple(1, 10.0).unwrap();
        let x = WalkPath::constant(1, Site::ORIGIN, 1.0);
        let r = solve_v_x(&x, 1.0, &k, &cfg(0.5, Scheme::ExplicitEuler, 5));
        assert!(matches!(r, Err(Error::Unstable { .. })));
        let far = WalkPath::constant(1, Site::at(5), 1.0);
        let r = solve_v_x(&far, 1.0, &k, &cfg(0.01, Scheme::Rk4, 5));
        assert!(matches!(r, Err(Error::WalkEscaped { .. })));
    }

    #[test]
    fn pam_zero_potential_is_one() {
        let k = JumpKernel::simple(2, 1.0).unwrap();
        let sol = solve_pam(Potential::Zero, &k, 1.0, 2.0, &cfg(0.05, Scheme::Rk4, 4)).unwrap();
        assert!(sol.field.values().iter().all(|v| (*v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn pam_frozen_walker_decouples() {
        let k = JumpKernel::simple(1, 0.0).unwrap();
        let spec = StaticPotentialSpec {
            law: PotentialLaw::Exponential { mean: 1.0 },
            dim: 1,
            radius: 6,
        };
        let p = StaticPotential::sample(&spec, &mut substream(3, 0)).unwrap();
        let max = p.values().iter().copied().fold(0.0, f64::max);
        let dt = 0.05 / max;
        let sol = solve_pam(Potential::Static(&p), &k, 1.0, 1.5, &cfg(dt, Scheme::Rk4, 6)).unwrap();
        for x in box_sites(1, 6) {
            let exact = (-p.value(x).unwrap() * 1.5).exp();
            assert!((sol.field.value(x) - exact).abs() < 1e-6 * exact.max(1e-3));
        }
    }

    #[test]
    fn pam_monotone_in_gamma() {
        let walker = JumpKernel::simple(1, 1.0).unwrap();
        let spec = TrapFieldSpec::new(JumpKernel::simple(1, 1.0).unwrap(), 0.5, 3.0, 10, 1e-6).unwrap();
        let field = TrapField::sample(&spec, &mut substream(4, 0));
        let c = cfg(0.01, Scheme::Rk4, 10);
        let mut prev: Option<Vec<f64>> = None;
        for g in [0.0, 0.5, 1.0, 2.0] {
            let u = solve_pam(Potential::Field(&field), &walker, g, 3.0, &c).unwrap().field.values().to_vec();
            assert!(u.iter().all(|v| *v > 0.0 && *v <= 1.0 + 1e-12));
            if let Some(p) = &prev {
                assert!(u.iter().zip(p).all(|(a, b)| *a <= *b + 1e-12));
            }
            prev = Some(u);
        }
    }

    #[test]
    fn reversed_field_gives_quenched_survival() {
        let walker = JumpKernel::simple(1, 1.0).unwrap();
        let spec = TrapFieldSpec::new(JumpKernel::simple(1, 1.0).unwrap(), 1.0, 2.0, 12, 1e-9).unwrap();
        let field = TrapField::sample(&spec, &mut substream(8, 0));
        let c = cfg(0.01, Scheme::Rk4, 12);
        let u = solve_pam(Potential::FieldReversed(&field), &walker, 1.0, 2.0, &c).unwrap().at_origin();
        let mc = crate::survival::quenched_survival(&field, KillRate::Finite(1.0), &walker, 2.0, 100_000, 5).unwrap();
        assert!((mc.value - u).abs() < 4.0 * mc.std_error, "{u} vs {} ± {}", mc.value, mc.std_error);
    }

    #[test]
    fn mass_matches_reversed_solve() {
        let walker = JumpKernel::simple(1, 1.0).unwrap();
        let spec = TrapFieldSpec::new(JumpKernel::simple(1, 1.0).unwrap(), 1.0, 4.0, 14, 1e-9).unwrap();
        let field = TrapField::sample(&spec, &mut substream(9, 0));
        let c = IntegratorConfig::new(0.01, Scheme::Rk4, 14, Boundary::DirichletZero).unwrap();
        let masses = quenched_mass(&field, &walker, 1.0, &[1.0, 2.5, 4.0], &c).unwrap();
        for (m, t) in masses.iter().zip([1.0, 2.5, 4.0]) {
            let u = solve_pam(Potential::FieldReversed(&field), &walker, 1.0, t, &c).unwrap().at_origin();
            assert!((m - u).abs() < 1e-9 * u, "{m} vs {u} at {t}");
        }
        let free = quenched_mass(&field, &walker, 0.0, &[4.0], &c).unwrap()[0];
        // only the mass leaving the box is lost
        assert!(free <= 1.0 && free > 1.0 - 1e-4);
        let open = IntegratorConfig::new(0.01, Scheme::Rk4, 14, Boundary::DirichletOne).unwrap();
        assert!(quenched_mass(&field, &walker, 1.0, &[1.0], &open).is_err());
    }

    #[test]
    fn snapshots_and_csv() {
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let x = WalkPath::constant(1, Site::ORIGIN, 1.0);
        let c = cfg(0.01, Scheme::Rk4, 3).with_snapshots(vec![0.5, 0.0]);
        let sol = solve_v_x(&x, 1.0, &k, &c).unwrap();
        assert_eq!(sol.snapshots.len(), 2);
        assert_eq!(sol.snapshots[0].time(), 0.0);
        assert_eq!(sol.snapshots[1].time(), 0.5);
        let mut buf = Vec::new();
        sol.field.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.starts_with("x1,value"));
    }

    #[test]
    fn periodic_lookup_wraps() {
        let mut f = LatticeField::constant(1, 2, Boundary::Periodic, 0.0);
        f.values[0] = 7.0;
        assert_eq!(f.value(Site::at(3)), 7.0);
        let g = LatticeField::constant(1, 2, Boundary::DirichletZero, 0.5);
        assert_eq!(g.value(Site::at(3)), 0.0);
    }

    #[test]
    fn pam_average_trivial_cases() {
        let c = cfg(0.01, Scheme::Rk4, 5);
        let p = ModelParams::simple(1, KillRate::Finite(1.0), 1.0, 1.0, 0.0).unwrap();
        let e = annealed_pam_average(&p, 2.0, 10, &c, 1).unwrap();
        assert_eq!((e.value, e.std_error), (1.0, 0.0));
        let p = ModelParams::simple(1, KillRate::Finite(0.0), 1.0, 1.0, 1.0).unwrap();
        assert_eq!(annealed_pam_average(&p, 2.0, 10, &c, 1).unwrap().value, 1.0);
    }
}
