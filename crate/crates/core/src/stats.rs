//! Mergeable sample accumulators and compensated summation.

use serde::{Deserialize, Serialize};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Count/mean/M2 accumulator (Welford), mergeable across workers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl MeanVar {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanVar) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        *self = MeanVar { n, mean, m2 };
    }

    /// Unbiased sample variance (0 for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Mean of `exp(l_i)` accumulated from log-values without underflow.
///
/// Keeps a running shift `m` and tracks sums of `exp(l - m)` and
/// `exp(2 (l - m))`, so the log of the mean and its delta-method standard
/// error stay finite even when every `exp(l_i)` is below `f64::MIN_POSITIVE`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMeanExp {
    n: u64,
    shift: f64,
    s1: f64,
    s2: f64,
}

impl Default for LogMeanExp {
    fn default() -> Self {
        Self {
            n: 0,
            shift: f64::NEG_INFINITY,
            s1: 0.0,
            s2: 0.0,
        }
    }
}

impl LogMeanExp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, log_x: f64) {
        self.n += 1;
        if log_x == f64::NEG_INFINITY {
            return;
        }
        if log_x > self.shift {
            let r = (self.shift - log_x).exp();
            self.s1 *= r;
            self.s2 *= r * r;
            self.shift = log_x;
        }
        let e = (log_x - self.shift).exp();
        self.s1 += e;
        self.s2 += e * e;
    }

    pub fn merge(&mut self, other: &LogMeanExp) {
        self.n += other.n;
        if other.shift == f64::NEG_INFINITY {
            return;
        }
        if self.shift == f64::NEG_INFINITY {
            self.shift = other.shift;
            self.s1 = other.s1;
            self.s2 = other.s2;
            return;
        }
        let shift = self.shift.max(other.shift);
        let ra = (self.shift - shift).exp();
        let rb = (other.shift - shift).exp();
        self.s1 = self.s1 * ra + other.s1 * rb;
        self.s2 = self.s2 * ra * ra + other.s2 * rb * rb;
        self.shift = shift;
    }

    /// `ln(mean)`; `-inf` when every sample was zero.
    pub fn log_mean(&self) -> f64 {
        if self.n == 0 || self.s1 <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shift + (self.s1 / self.n as f64).ln()
    }

    pub fn mean(&self) -> f64 {
        self.log_mean().exp()
    }

    /// Standard error of the mean relative to the mean (delta-method SE of
    /// the log mean).
    pub fn rel_std_error(&self) -> f64 {
        if self.n < 2 || self.s1 <= 0.0 {
            return 0.0;
        }
        let n = self.n as f64;
        let m1 = self.s1 / n;
        let m2 = self.s2 / n;
        let var = ((m2 - m1 * m1) * n / (n - 1.0)).max(0.0);
        (var / n).sqrt() / m1
    }
}

/// Weighted quantile of `values` under nonnegative `weights`.
///
/// Returns the smallest value whose cumulative normalized weight reaches `q`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    assert_eq!(values.len(), weights.len());
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let target = q.clamp(0.0, 1.0) * total;
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= target && weights[i] > 0.0 {
            return values[i];
        }
    }
    idx.last().map(|&i| values[i]).unwrap_or(f64::NAN)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}
