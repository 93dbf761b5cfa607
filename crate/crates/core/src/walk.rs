//! Continuous-time random walks on Z^d.
//!
//! Paths are right-continuous step functions stored as jump times plus the
//! sequence of visited positions. Everything downstream (local times, ranges,
//! trap interactions) is computed exactly from this representation, with no
//! time discretization.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::CompensatedSum;

/// Largest lattice dimension supported by [`Site`].
pub const MAX_DIM: usize = 4;

/// Schema version of the JSON path record.
pub const PATH_SCHEMA_VERSION: u32 = 1;

/// A site of Z^d, d <= [`MAX_DIM`]. Unused coordinates are zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Site(pub [i32; MAX_DIM]);

impl Site {
    pub const ORIGIN: Site = Site([0; MAX_DIM]);

    pub fn new(coords: &[i32]) -> Result<Site> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::param(
                "site",
                format!("dimension {} not in 1..={MAX_DIM}", coords.len()),
            ));
        }
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Site(c))
    }

    /// One-dimensional site.
    pub const fn at(x: i32) -> Site {
        let mut c = [0; MAX_DIM];
        c[0] = x;
        Site(c)
    }

    #[inline]
    pub fn x(&self) -> i32 {
        self.0[0]
    }

    pub fn coords(&self, dim: usize) -> &[i32] {
        &self.0[..dim]
    }

    /// Max-norm.
    #[inline]
    pub fn sup_norm(&self) -> i64 {
        self.0.iter().map(|c| i64::from(*c).abs()).max().unwrap_or(0)
    }

    pub fn is_origin(&self) -> bool {
        self.0 == [0; MAX_DIM]
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let last = self.0.iter().rposition(|c| *c != 0).unwrap_or(0);
        f.debug_list().entries(&self.0[..=last]).finish()
    }
}

impl Add for Site {
    type Output = Site;
    #[inline]
    fn add(self, o: Site) -> Site {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(o.0) {
            *a += b;
        }
        Site(c)
    }
}

impl Sub for Site {
    type Output = Site;
    #[inline]
    fn sub(self, o: Site) -> Site {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(o.0) {
            *a -= b;
        }
        Site(c)
    }
}

impl Neg for Site {
    type Output = Site;
    fn neg(self) -> Site {
        Site(self.0.map(|c| -c))
    }
}

/// Finite-support jump law plus a jump rate.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpKernel {
    dim: usize,
    support: Vec<(Site, f64)>,
    cumulative: Vec<f64>,
    rate: f64,
    symmetric: bool,
    mean_zero: bool,
    nearest_neighbor: bool,
    max_step: i64,
}

impl JumpKernel {
    pub fn new(dim: usize, support: Vec<(Site, f64)>, rate: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidKernel(format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::InvalidKernel(format!("rate {rate} must be finite and >= 0")));
        }
        if support.is_empty() {
            return Err(Error::InvalidKernel("empty support".into()));
        }
        let mut total = 0.0;
        for (step, p) in &support {
            if step.is_origin() {
                return Err(Error::InvalidKernel("zero displacement in support".into()));
            }
            if step.0[dim..].iter().any(|c| *c != 0) {
                return Err(Error::InvalidKernel(format!("step {step:?} exceeds dimension {dim}")));
            }
            if !(*p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidKernel(format!("probability {p} must be > 0")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidKernel(format!("probabilities sum to {total}, not 1")));
        }
        let prob_of = |s: Site| -> f64 {
            support
                .iter()
                .filter(|(z, _)| *z == s)
                .map(|(_, p)| *p)
                .sum()
        };
        let symmetric = support
            .iter()
            .all(|(z, _)| (prob_of(*z) - prob_of(-*z)).abs() <= 1e-12);
        let mean_zero = (0..dim).all(|i| {
            support
                .iter()
                .map(|(z, p)| f64::from(z.0[i]) * p)
                .sum::<f64>()
                .abs()
                <= 1e-12
        });
        let nearest_neighbor = support.iter().all(|(z, _)| {
            z.0.iter().map(|c| c.unsigned_abs()).sum::<u32>() == 1
        });
        let max_step = support.iter().map(|(z, _)| z.sup_norm()).max().unwrap_or(0);
        let mut acc = 0.0;
        let cumulative = support
            .iter()
            .map(|(_, p)| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            dim,
            support,
            cumulative,
            rate,
            symmetric,
            mean_zero,
            nearest_neighbor,
            max_step,
        })
    }

    /// Simple symmetric kernel: each of the 2d unit steps with probability 1/(2d).
    pub fn simple(dim: usize, rate: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidKernel(format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        let p = 1.0 / (2 * dim) as f64;
        let mut support = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            let mut e = [0; MAX_DIM];
            e[i] = 1;
            support.push((Site(e), p));
            support.push((-Site(e), p));
        }
        Self::new(dim, support, rate)
    }

    /// One-dimensional kernel from integer steps.
    pub fn one_dim(steps: &[(i32, f64)], rate: f64) -> Result<Self> {
        Self::new(1, steps.iter().map(|(z, p)| (Site::at(*z), *p)).collect(), rate)
    }

    pub fn with_rate(&self, rate: f64) -> Result<Self> {
        Self::new(self.dim, self.support.clone(), rate)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn support(&self) -> &[(Site, f64)] {
        &self.support
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn is_mean_zero(&self) -> bool {
        self.mean_zero
    }

    pub fn is_nearest_neighbor(&self) -> bool {
        self.nearest_neighbor
    }

    /// Largest sup-norm of a single step.
    pub fn max_step(&self) -> i64 {
        self.max_step
    }

    #[inline]
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> Site {
        let u: f64 = rng.random();
        let k = self
            .cumulative
            .iter()
            .position(|c| u < *c)
            .unwrap_or(self.support.len() - 1);
        self.support[k].0
    }

    /// `max_{i, ±} ln Σ_z p(z) e^{±λ z_i}`: the worst coordinate log-MGF,
    /// used by the Chernoff bounds on walk excursions.
    pub fn coordinate_log_mgf(&self, lambda: f64) -> f64 {
        (0..self.dim)
            .flat_map(|i| [1.0, -1.0].map(move |s| (i, s)))
            .map(|(i, s)| {
                self.support
                    .iter()
                    .map(|(z, p)| p * (s * lambda * f64::from(z.0[i])).exp())
                    .sum::<f64>()
                    .ln()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A right-continuous piecewise-constant lattice path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    dim: usize,
    rate: f64,
    composite: bool,
    horizon: f64,
    jump_times: Vec<f64>,
    positions: Vec<Site>,
    lo: Site,
    hi: Site,
}

impl WalkPath {
    /// Sample a path by exponential spacings.
    pub fn sample<R: Rng + ?Sized>(
        kernel: &JumpKernel,
        origin: Site,
        horizon: f64,
        rng: &mut R,
    ) -> WalkPath {
        assert!(horizon >= 0.0, "horizon must be nonnegative");
        let mut jump_times = Vec::new();
        let mut positions = vec![origin];
        if kernel.rate > 0.0 {
            let inv = 1.0 / kernel.rate;
            let mut t = 0.0;
            let mut pos = origin;
            loop {
                let e: f64 = Exp1.sample(rng);
                t += e * inv;
                if t > horizon {
                    break;
                }
                pos = pos + kernel.sample_step(rng);
                jump_times.push(t);
                positions.push(pos);
            }
        }
        Self::assemble(kernel.dim, kernel.rate, false, horizon, jump_times, positions)
    }

    /// The path that stays at `origin`.
    pub fn constant(dim: usize, origin: Site, horizon: f64) -> WalkPath {
        Self::assemble(dim, 0.0, false, horizon, Vec::new(), vec![origin])
    }

    /// Build a path from explicit jumps, checking the structural invariants.
    pub fn from_jumps(
        dim: usize,
        rate: f64,
        jump_times: Vec<f64>,
        positions: Vec<Site>,
        horizon: f64,
    ) -> Result<WalkPath> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::param("dim", format!("{dim} not in 1..={MAX_DIM}")));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::param("horizon", format!("{horizon} must be finite and >= 0")));
        }
        if positions.len() != jump_times.len() + 1 {
            return Err(Error::param(
                "positions",
                format!("{} positions for {} jumps", positions.len(), jump_times.len()),
            ));
        }
        let mut prev = 0.0;
        for &t in &jump_times {
            if !(t > prev && t <= horizon) {
                return Err(Error::param(
                    "jump_times",
                    format!("times must be strictly increasing in (0, {horizon}]"),
                ));
            }
            prev = t;
        }
        for w in positions.windows(2) {
            if w[0] == w[1] {
                return Err(Error::param("positions", "zero displacement"));
            }
        }
        if positions.iter().any(|p| p.0[dim..].iter().any(|c| *c != 0)) {
            return Err(Error::param("positions", format!("site outside dimension {dim}")));
        }
        if rate == 0.0 && !jump_times.is_empty() {
            return Err(Error::param("rate", "rate 0 path cannot jump"));
        }
        Ok(Self::assemble(dim, rate, false, horizon, jump_times, positions))
    }

    /// Check that every step of this path lies in the kernel support.
    pub fn check_kernel(&self, kernel: &JumpKernel) -> Result<()> {
        if kernel.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: kernel.dim,
                found: self.dim,
            });
        }
        for w in self.positions.windows(2) {
            let step = w[1] - w[0];
            if !kernel.support.iter().any(|(z, _)| *z == step) {
                return Err(Error::InvalidKernel(format!("step {step:?} not in kernel support")));
            }
        }
        Ok(())
    }

    fn assemble(
        dim: usize,
        rate: f64,
        composite: bool,
        horizon: f64,
        jump_times: Vec<f64>,
        positions: Vec<Site>,
    ) -> WalkPath {
        let mut lo = positions[0];
        let mut hi = positions[0];
        for p in &positions[1..] {
            for i in 0..dim {
                lo.0[i] = lo.0[i].min(p.0[i]);
                hi.0[i] = hi.0[i].max(p.0[i]);
            }
        }
        WalkPath {
            dim,
            rate,
            composite,
            horizon,
            jump_times,
            positions,
            lo,
            hi,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// True for paths built by [`difference_path`].
    pub fn is_composite(&self) -> bool {
        self.composite
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn origin(&self) -> Site {
        self.positions[0]
    }

    pub fn end(&self) -> Site {
        *self.positions.last().expect("nonempty")
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn positions(&self) -> &[Site] {
        &self.positions
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    /// Coordinate-wise lower corner of the bounding box of the range.
    pub fn lower(&self) -> Site {
        self.lo
    }

    /// Coordinate-wise upper corner of the bounding box of the range.
    pub fn upper(&self) -> Site {
        self.hi
    }

    /// True when every step has l1-length one.
    pub fn is_nearest_neighbor(&self) -> bool {
        self.positions.windows(2).all(|w| {
            (w[1] - w[0]).0.iter().map(|c| c.unsigned_abs()).sum::<u32>() == 1
        })
    }

    /// Position at time `s` (right-continuous). Times outside `[0, horizon]`
    /// are clamped.
    pub fn position_at(&self, s: f64) -> Site {
        let k = self.jump_times.partition_point(|&t| t <= s);
        self.positions[k]
    }

    /// Start time of the `k`-th constant piece.
    #[inline]
    fn piece_start(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.jump_times[k - 1]
        }
    }

    #[inline]
    fn piece_end(&self, k: usize) -> f64 {
        self.jump_times.get(k).copied().unwrap_or(self.horizon)
    }

    /// Time spent at `site` during `[0, horizon]`.
    pub fn local_time(&self, site: Site) -> f64 {
        let mut acc = CompensatedSum::new();
        for (k, p) in self.positions.iter().enumerate() {
            if *p == site {
                acc.add(self.piece_end(k) - self.piece_start(k));
            }
        }
        acc.value()
    }

    /// Local times of all visited sites, sorted by site. Sites visited only
    /// at an instant (zero-length piece) appear with local time 0.
    pub fn local_times(&self) -> Vec<(Site, f64)> {
        let mut pieces: Vec<(Site, f64)> = self
            .positions
            .iter()
            .enumerate()
            .map(|(k, p)| (*p, self.piece_end(k) - self.piece_start(k)))
            .collect();
        aggregate_local_times(&mut pieces)
    }

    /// Set of visited sites.
    pub fn range(&self) -> BTreeSet<Site> {
        self.positions.iter().copied().collect()
    }

    /// Number of distinct visited sites.
    pub fn range_size(&self) -> usize {
        let mut scratch = PairScratch::default();
        visited_count(self.dim, self.lo, self.hi, self.positions.iter().copied(), &mut scratch)
    }

    /// `(max, min)` of the path over `[0, horizon]`; d = 1 only.
    pub fn running_extrema(&self) -> Result<(i32, i32)> {
        if self.dim != 1 {
            return Err(Error::UnsupportedDimension {
                required: 1,
                found: self.dim,
            });
        }
        Ok((self.hi.x(), self.lo.x()))
    }

    /// `sup_{s <= t} |X_s|` in the max-norm.
    pub fn sup_norm(&self) -> i64 {
        self.lo.sup_norm().max(self.hi.sup_norm())
    }

    /// The piece of the path on `[from, to]`, shifted to start at time 0.
    pub fn segment(&self, from: f64, to: f64) -> Result<WalkPath> {
        if !(0.0 <= from && from <= to && to <= self.horizon) {
            return Err(Error::TimeOutOfRange {
                time: if from < 0.0 || from > to { from } else { to },
                horizon: self.horizon,
            });
        }
        let first = self.jump_times.partition_point(|&t| t <= from);
        let last = self.jump_times.partition_point(|&t| t <= to);
        let jump_times = self.jump_times[first..last].iter().map(|t| t - from).collect();
        let positions = self.positions[first..=last].to_vec();
        Ok(Self::assemble(self.dim, self.rate, self.composite, to - from, jump_times, positions))
    }

    /// Versioned JSON record (initial site plus displacements).
    pub fn to_record(&self) -> PathRecord {
        PathRecord {
            schema_version: PATH_SCHEMA_VERSION,
            d: self.dim,
            rate: self.rate,
            origin: self.origin().coords(self.dim).to_vec(),
            jump_times: self.jump_times.clone(),
            displacements: self
                .positions
                .windows(2)
                .map(|w| (w[1] - w[0]).coords(self.dim).to_vec())
                .collect(),
            horizon: self.horizon,
        }
    }

    pub fn from_record(rec: &PathRecord) -> Result<WalkPath> {
        if rec.schema_version != PATH_SCHEMA_VERSION {
            return Err(Error::Serde(format!(
                "unsupported path schema version {}",
                rec.schema_version
            )));
        }
        if rec.displacements.len() != rec.jump_times.len() {
            return Err(Error::param("displacements", "one displacement per jump time"));
        }
        let mut pos = Site::new(&rec.origin)?;
        let mut positions = vec![pos];
        for d in &rec.displacements {
            if d.len() != rec.d {
                return Err(Error::DimensionMismatch {
                    expected: rec.d,
                    found: d.len(),
                });
            }
            pos = pos + Site::new(d)?;
            positions.push(pos);
        }
        Self::from_jumps(rec.d, rec.rate, rec.jump_times.clone(), positions, rec.horizon)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("path record serializes")
    }

    pub fn from_json(s: &str) -> Result<WalkPath> {
        Self::from_record(&serde_json::from_str(s)?)
    }
}

/// Serialized form of a [`WalkPath`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathRecord {
    pub schema_version: u32,
    pub d: usize,
    pub rate: f64,
    pub origin: Vec<i32>,
    pub jump_times: Vec<f64>,
    pub displacements: Vec<Vec<i32>>,
    pub horizon: f64,
}

fn check_pair(a: &WalkPath, b: &WalkPath) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    if a.horizon != b.horizon {
        return Err(Error::HorizonMismatch {
            a: a.horizon,
            b: b.horizon,
        });
    }
    Ok(())
}

/// Visit the constant pieces of `a(s) - b(s)` in time order as
/// `(start, end, position)`.
///
/// Jump times of both paths are merged. Jumps of `a` and `b` at the same
/// instant are applied together (a's first) and produce a single net step,
/// or no step at all when they cancel. A jump exactly at the horizon yields
/// a final piece of length zero.
#[inline]
pub fn for_each_difference_piece<F: FnMut(f64, f64, Site)>(a: &WalkPath, b: &WalkPath, f: F) {
    for_each_difference_piece_until(a, b, a.horizon, f)
}

/// As [`for_each_difference_piece`], restricted to `[0, until]`.
#[inline]
pub fn for_each_difference_piece_until<F: FnMut(f64, f64, Site)>(
    a: &WalkPath,
    b: &WalkPath,
    until: f64,
    mut f: F,
) {
    let (ta, tb) = (&a.jump_times, &b.jump_times);
    let (mut i, mut j) = (0usize, 0usize);
    let mut current = a.positions[0] - b.positions[0];
    let mut start = 0.0;
    loop {
        let na = ta.get(i).copied().unwrap_or(f64::INFINITY);
        let nb = tb.get(j).copied().unwrap_or(f64::INFINITY);
        let next = na.min(nb);
        if next > until {
            break;
        }
        if na <= nb {
            i += 1;
        }
        if nb <= na {
            j += 1;
        }
        let moved = a.positions[i] - b.positions[j];
        if moved != current {
            f(start, next, current);
            current = moved;
            start = next;
        }
    }
    f(start, until.max(start), current);
}

/// d = 1 version of [`for_each_difference_piece_until`] on raw coordinates.
#[inline]
fn for_each_difference_piece_1d<F: FnMut(f64, f64, i32)>(a: &WalkPath, b: &WalkPath, until: f64, mut f: F) {
    let (ta, tb) = (&a.jump_times[..], &b.jump_times[..]);
    let (pa, pb) = (&a.positions[..], &b.positions[..]);
    let (mut i, mut j) = (0usize, 0usize);
    let mut current = pa[0].0[0] - pb[0].0[0];
    let mut start = 0.0;
    loop {
        let na = if i < ta.len() { ta[i] } else { f64::INFINITY };
        let nb = if j < tb.len() { tb[j] } else { f64::INFINITY };
        let next = na.min(nb);
        if next > until {
            break;
        }
        i += usize::from(na <= nb);
        j += usize::from(nb <= na);
        let moved = pa[i].0[0] - pb[j].0[0];
        if moved != current {
            f(start, next, current);
            current = moved;
            start = next;
        }
    }
    f(start, until.max(start), current);
}

/// The path `s -> a(s) - b(s)`.
pub fn difference_path(a: &WalkPath, b: &WalkPath) -> Result<WalkPath> {
    check_pair(a, b)?;
    let mut jump_times = Vec::with_capacity(a.jump_count() + b.jump_count());
    let mut positions = Vec::with_capacity(a.jump_count() + b.jump_count() + 1);
    for_each_difference_piece(a, b, |start, _, p| {
        if !positions.is_empty() {
            jump_times.push(start);
        }
        positions.push(p);
    });
    Ok(WalkPath::assemble(a.dim, a.rate + b.rate, true, a.horizon, jump_times, positions))
}

/// Reusable buffers for the pairwise statistics below.
#[derive(Debug, Default, Clone)]
pub struct PairScratch {
    bits: Vec<u64>,
    times: Vec<f64>,
    touched: Vec<usize>,
    sites: Vec<Site>,
    pieces: Vec<(Site, f64)>,
}

fn visited_count<I: Iterator<Item = Site>>(
    dim: usize,
    lo: Site,
    hi: Site,
    sites: I,
    scratch: &mut PairScratch,
) -> usize {
    if dim == 1 {
        let width = (i64::from(hi.x()) - i64::from(lo.x()) + 1) as usize;
        scratch.bits.clear();
        scratch.bits.resize(width.div_ceil(64), 0);
        let mut count = 0;
        for s in sites {
            let k = (s.x() - lo.x()) as usize;
            let (w, b) = (k / 64, 1u64 << (k % 64));
            if scratch.bits[w] & b == 0 {
                scratch.bits[w] |= b;
                count += 1;
            }
        }
        count
    } else {
        scratch.sites.clear();
        scratch.sites.extend(sites);
        scratch.sites.sort_unstable();
        scratch.sites.dedup();
        scratch.sites.len()
    }
}

fn aggregate_local_times(pieces: &mut [(Site, f64)]) -> Vec<(Site, f64)> {
    pieces.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: Vec<(Site, f64)> = Vec::new();
    let mut acc = CompensatedSum::new();
    for (k, (s, dt)) in pieces.iter().enumerate() {
        acc.add(*dt);
        if k + 1 == pieces.len() || pieces[k + 1].0 != *s {
            out.push((*s, acc.value()));
            acc = CompensatedSum::new();
        }
    }
    out
}

/// Bounding box of `a - b` implied by the two boxes.
fn difference_box(a: &WalkPath, b: &WalkPath) -> (Site, Site) {
    (a.lo - b.hi, a.hi - b.lo)
}

/// `|Range(a - b)|` without materializing the difference path.
pub fn difference_range_size(a: &WalkPath, b: &WalkPath, scratch: &mut PairScratch) -> usize {
    debug_assert!(check_pair(a, b).is_ok());
    let (lo, hi) = difference_box(a, b);
    if a.dim == 1 {
        let width = (i64::from(hi.x()) - i64::from(lo.x()) + 1) as usize;
        let mut bits = std::mem::take(&mut scratch.bits);
        bits.clear();
        bits.resize(width.div_ceil(64), 0);
        let mut count = 0;
        let base = lo.x();
        for_each_difference_piece_1d(a, b, a.horizon, |_, _, p| {
            let k = (p - base) as usize;
            let (w, m) = (k / 64, 1u64 << (k % 64));
            if bits[w] & m == 0 {
                bits[w] |= m;
                count += 1;
            }
        });
        scratch.bits = bits;
        count
    } else {
        let mut sites = std::mem::take(&mut scratch.sites);
        sites.clear();
        for_each_difference_piece(a, b, |_, _, p| sites.push(p));
        sites.sort_unstable();
        sites.dedup();
        let n = sites.len();
        scratch.sites = sites;
        n
    }
}

/// Call `f(site, local_time)` for every site visited by `a - b` (sites
/// visited only at an instant are reported with local time 0).
pub fn for_each_difference_local_time<F: FnMut(Site, f64)>(
    a: &WalkPath,
    b: &WalkPath,
    scratch: &mut PairScratch,
    mut f: F,
) {
    debug_assert!(check_pair(a, b).is_ok());
    let (lo, hi) = difference_box(a, b);
    if a.dim == 1 {
        let width = (i64::from(hi.x()) - i64::from(lo.x()) + 1) as usize;
        let mut times = std::mem::take(&mut scratch.times);
        let mut touched = std::mem::take(&mut scratch.touched);
        if times.len() < width {
            times.resize(width, -1.0);
        }
        touched.clear();
        let base = lo.x();
        for_each_difference_piece_1d(a, b, a.horizon, |s, e, p| {
            let k = (p - base) as usize;
            if times[k] < 0.0 {
                times[k] = 0.0;
                touched.push(k);
            }
            times[k] += e - s;
        });
        for &k in &touched {
            f(Site::at(base + k as i32), times[k]);
            times[k] = -1.0;
        }
        scratch.times = times;
        scratch.touched = touched;
    } else {
        let mut pieces = std::mem::take(&mut scratch.pieces);
        pieces.clear();
        for_each_difference_piece(a, b, |s, e, p| pieces.push((p, e - s)));
        for (s, l) in aggregate_local_times(&mut pieces) {
            f(s, l);
        }
        scratch.pieces = pieces;
    }
}

/// Total time during which `a(s) == b(s)`.
pub fn collision_time(a: &WalkPath, b: &WalkPath) -> f64 {
    debug_assert!(check_pair(a, b).is_ok());
    collision_time_until(a, b, a.horizon)
}

/// Total time in `[0, until]` during which `a(s) == b(s)`; `until` must not
/// exceed either horizon.
pub fn collision_time_until(a: &WalkPath, b: &WalkPath, until: f64) -> f64 {
    debug_assert!(until <= a.horizon && until <= b.horizon);
    let (lo, hi) = difference_box(a, b);
    if (0..a.dim).any(|i| lo.0[i] > 0 || hi.0[i] < 0) {
        return 0.0;
    }
    let mut acc = CompensatedSum::new();
    if a.dim == 1 {
        for_each_difference_piece_1d(a, b, until, |s, e, p| {
            if p == 0 {
                acc.add(e - s);
            }
        });
    } else {
        for_each_difference_piece_until(a, b, until, |s, e, p| {
            if p.is_origin() {
                acc.add(e - s);
            }
        });
    }
    acc.value()
}

/// Whether `a` and `b` share a site for a positive amount of time.
pub fn collides(a: &WalkPath, b: &WalkPath) -> bool {
    collision_time(a, b) > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::substream;
    use proptest::prelude::*;
    use rand::Rng;

    fn p1(times: &[f64], xs: &[i32], horizon: f64) -> WalkPath {
        WalkPath::from_jumps(
            1,
            1.0,
            times.to_vec(),
            xs.iter().map(|x| Site::at(*x)).collect(),
            horizon,
        )
        .unwrap()
    }

    #[test]
    fn kernel_validation() {
        assert!(JumpKernel::one_dim(&[(1, 0.5), (-1, 0.5)], 1.0).is_ok());
        assert!(JumpKernel::one_dim(&[(1, 0.5), (0, 0.5)], 1.0).is_err());
        assert!(JumpKernel::one_dim(&[(1, 0.5), (-1, 0.4)], 1.0).is_err());
        assert!(JumpKernel::one_dim(&[], 1.0).is_err());
        assert!(JumpKernel::one_dim(&[(1, 1.0)], -1.0).is_err());
        let k = JumpKernel::one_dim(&[(1, 0.7), (-1, 0.3)], 1.0).unwrap();
        assert!(!k.is_symmetric() && !k.is_mean_zero());
        let k = JumpKernel::one_dim(&[(2, 0.25), (-1, 0.5), (-3, 0.25)], 1.0).unwrap();
        assert!(!k.is_symmetric() && !k.is_mean_zero());
        let k = JumpKernel::one_dim(&[(2, 0.2), (-1, 0.4), (1, 0.2), (-4, 0.2)], 1.0).unwrap();
        assert!(!k.is_symmetric());
        let k = JumpKernel::simple(3, 2.0).unwrap();
        assert!(k.is_symmetric() && k.is_mean_zero() && k.is_nearest_neighbor());
        assert_eq!(k.support().len(), 6);
    }

    #[test]
    fn rate_zero_and_horizon_zero() {
        let mut rng = substream(1, 0);
        let k0 = JumpKernel::simple(1, 0.0).unwrap();
        let p = WalkPath::sample(&k0, Site::at(0), 5.0, &mut rng);
        assert_eq!(p.jump_count(), 0);
        assert_eq!(p.local_time(Site::at(0)), 5.0);
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let p = WalkPath::sample(&k, Site::at(4), 0.0, &mut rng);
        assert_eq!(p.positions(), &[Site::at(4)]);
        assert_eq!(p.jump_count(), 0);
    }

    #[test]
    fn local_time_by_interval_arithmetic() {
        let p = p1(&[1.0, 3.0], &[0, 1, 0], 5.0);
        assert_eq!(p.local_time(Site::at(0)), 3.0);
        assert_eq!(p.local_time(Site::at(1)), 2.0);
        assert_eq!(p.local_time(Site::at(7)), 0.0);
        let c = WalkPath::constant(1, Site::at(0), 7.0);
        assert_eq!(c.local_time(Site::at(0)), 7.0);
    }

    #[test]
    fn range_and_extrema() {
        let p = p1(&[0.5, 1.0, 2.0], &[0, 1, 0, -1], 3.0);
        let r: Vec<i32> = p.range().iter().map(|s| s.x()).collect();
        assert_eq!(r, vec![-1, 0, 1]);
        assert_eq!(p.range_size(), 3);
        let q = p1(&[0.5, 1.0, 2.0], &[0, 1, 2, 1], 3.0);
        assert_eq!(q.running_extrema().unwrap(), (2, 0));
        let c = WalkPath::constant(1, Site::at(3), 1.0);
        assert_eq!(c.running_extrema().unwrap(), (3, 3));
        assert_eq!(c.range_size(), 1);
        let two = WalkPath::constant(2, Site::ORIGIN, 1.0);
        assert!(matches!(two.running_extrema(), Err(Error::UnsupportedDimension { .. })));
    }

    #[test]
    fn sup_norm_cases() {
        assert_eq!(WalkPath::constant(1, Site::ORIGIN, 1.0).sup_norm(), 0);
        let p = WalkPath::from_jumps(1, 1.0, vec![1.0, 2.0], vec![Site::at(0), Site::at(-2), Site::at(1)], 3.0)
            .unwrap();
        assert_eq!(p.sup_norm(), 2);
    }

    #[test]
    fn difference_identities() {
        let mut rng = substream(3, 0);
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let a = WalkPath::sample(&k, Site::at(0), 10.0, &mut rng);
        let zero = WalkPath::constant(1, Site::at(0), 10.0);
        let d = difference_path(&a, &zero).unwrap();
        assert_eq!(d.positions(), a.positions());
        assert_eq!(d.jump_times(), a.jump_times());
        assert!(d.is_composite());
        let same = difference_path(&a, &a).unwrap();
        assert_eq!(same.positions(), &[Site::at(0)]);
        assert_eq!(same.jump_count(), 0);
        let short = WalkPath::constant(1, Site::at(0), 3.0);
        assert!(matches!(difference_path(&a, &short), Err(Error::HorizonMismatch { .. })));
        let planar = WalkPath::constant(2, Site::ORIGIN, 10.0);
        assert!(matches!(difference_path(&a, &planar), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn simultaneous_jumps_merge_into_one_step() {
        let a = p1(&[1.0, 2.0], &[0, 1, 2], 3.0);
        let b = p1(&[1.0], &[0, 1], 3.0);
        let d = difference_path(&a, &b).unwrap();
        // at t=1 both move by +1: no net change
        assert_eq!(d.jump_times(), &[2.0]);
        assert_eq!(d.positions(), &[Site::at(0), Site::at(1)]);
        let c = p1(&[1.0], &[0, -1], 3.0);
        let d = difference_path(&a, &c).unwrap();
        assert_eq!(d.jump_times(), &[1.0, 2.0]);
        assert_eq!(d.positions(), &[Site::at(0), Site::at(2), Site::at(3)]);
    }

    #[test]
    fn collision_time_matches_interval_intersection() {
        // independent oracle: intersect constant pieces of a and b directly
        fn brute(a: &WalkPath, b: &WalkPath) -> f64 {
            let pieces = |p: &WalkPath| -> Vec<(f64, f64, Site)> {
                (0..p.positions().len())
                    .map(|k| {
                        let s = if k == 0 { 0.0 } else { p.jump_times()[k - 1] };
                        let e = p.jump_times().get(k).copied().unwrap_or(p.horizon());
                        (s, e, p.positions()[k])
                    })
                    .collect()
            };
            let mut total = 0.0;
            for (s1, e1, x1) in pieces(a) {
                for (s2, e2, x2) in pieces(b) {
                    if x1 == x2 {
                        total += (e1.min(e2) - s1.max(s2)).max(0.0);
                    }
                }
            }
            total
        }
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let mut rng = substream(5, 0);
        for _ in 0..100 {
            let a = WalkPath::sample(&k, Site::at(0), 20.0, &mut rng);
            let b = WalkPath::sample(&k, Site::at(2), 20.0, &mut rng);
            let d = difference_path(&a, &b).unwrap();
            let oracle = brute(&a, &b);
            assert!((d.local_time(Site::ORIGIN) - oracle).abs() < 1e-12);
            assert!((collision_time(&a, &b) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_neighbor_range_matches_extrema() {
        let k = JumpKernel::simple(1, 1.0).unwrap();
        let mut rng = substream(9, 0);
        for _ in 0..200 {
            let p = WalkPath::sample(&k, Site::at(0), 30.0, &mut rng);
            let (max, min) = p.running_extrema().unwrap();
            assert_eq!((max - min + 1) as usize, p.range_size());
            assert_eq!(p.sup_norm(), i64::from(max.abs().max(min.abs())));
        }
    }

    #[test]
    fn record_round_trip_and_rejects_unknown_version() {
        let k = JumpKernel::simple(2, 1.5).unwrap();
        let mut rng = substream(2, 0);
        let p = WalkPath::sample(&k, Site::new(&[1, -1]).unwrap(), 4.0, &mut rng);
        let back = WalkPath::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        let mut rec = p.to_record();
        rec.schema_version = 99;
        assert!(WalkPath::from_record(&rec).is_err());
    }

    #[test]
    fn segment_restricts_and_shifts() {
        let p = p1(&[1.0, 3.0, 4.5], &[0, 1, 0, -1], 6.0);
        let s = p.segment(2.0, 5.0).unwrap();
        assert_eq!(s.horizon(), 3.0);
        assert_eq!(s.jump_times(), &[1.0, 2.5]);
        assert_eq!(s.positions(), &[Site::at(1), Site::at(0), Site::at(-1)]);
        assert!(p.segment(2.0, 7.0).is_err());
    }

    fn arb_kernel() -> impl Strategy<Value = JumpKernel> {
        prop_oneof![
            Just(JumpKernel::simple(1, 1.0).unwrap()),
            Just(JumpKernel::simple(2, 2.0).unwrap()),
            Just(JumpKernel::one_dim(&[(1, 0.25), (-1, 0.25), (3, 0.25), (-3, 0.25)], 1.5).unwrap()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn local_times_partition_horizon(k in arb_kernel(), seed in any::<u64>(), t in 0.0f64..200.0) {
            let mut rng = substream(seed, 0);
            let p = WalkPath::sample(&k, Site::ORIGIN, t, &mut rng);
            let mut sum = CompensatedSum::new();
            for (_, l) in p.local_times() {
                sum.add(l);
            }
            prop_assert!((sum.value() - t).abs() <= 1e-12 * t.max(1.0));
            prop_assert_eq!(p.local_times().len(), p.range_size());
        }

        #[test]
        fn difference_matches_pointwise(k in arb_kernel(), seed in any::<u64>(), t in 0.1f64..50.0) {
            let mut rng = substream(seed, 1);
            let a = WalkPath::sample(&k, Site::ORIGIN, t, &mut rng);
            let b = WalkPath::sample(&k, Site::ORIGIN, t, &mut rng);
            let d = difference_path(&a, &b).unwrap();
            for _ in 0..1000 {
                let s: f64 = rng.random::<f64>() * t;
                prop_assert_eq!(d.position_at(s), a.position_at(s) - b.position_at(s));
            }
            let mut scratch = PairScratch::default();
            prop_assert_eq!(difference_range_size(&a, &b, &mut scratch), d.range_size());
            let mut lts = Vec::new();
            for_each_difference_local_time(&a, &b, &mut scratch, |s, l| lts.push((s, l)));
            lts.sort_by(|x, y| x.0.cmp(&y.0));
            let direct = d.local_times();
            prop_assert_eq!(lts.len(), direct.len());
            for ((s1, l1), (s2, l2)) in lts.iter().zip(&direct) {
                prop_assert_eq!(s1, s2);
                prop_assert!((l1 - l2).abs() < 1e-9);
            }
        }

        #[test]
        fn collision_time_matches_difference(k in arb_kernel(), seed in any::<u64>(), t in 0.1f64..50.0) {
            let mut rng = substream(seed, 2);
            let start = Site::new(&vec![2; k.dim()]).unwrap();
            let a = WalkPath::sample(&k, start, t, &mut rng);
            let b = WalkPath::sample(&k, Site::ORIGIN, t, &mut rng);
            let d = difference_path(&a, &b).unwrap();
            let expected = d.local_time(Site::ORIGIN);
            let got = collision_time(&a, &b);
            prop_assert!((got - expected).abs() < 1e-9);
            prop_assert_eq!(collides(&a, &b), expected > 0.0);
        }

        #[test]
        fn sampling_is_deterministic(seed in any::<u64>()) {
            let k = JumpKernel::simple(2, 1.0).unwrap();
            let a = WalkPath::sample(&k, Site::ORIGIN, 20.0, &mut substream(seed, 4));
            let b = WalkPath::sample(&k, Site::ORIGIN, 20.0, &mut substream(seed, 4));
            prop_assert_eq!(a.to_json(), b.to_json());
        }
    }
}
