//! Model parameters shared by the estimators.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::walk::JumpKernel;

/// Killing rate per trap. `Hard` is γ = ∞ (instant killing on contact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KillRate {
    Finite(f64),
    Hard,
}

impl KillRate {
    pub fn finite(gamma: f64) -> Result<KillRate> {
        if gamma >= 0.0 && gamma.is_finite() {
            Ok(KillRate::Finite(gamma))
        } else {
            Err(Error::param("gamma", format!("{gamma} must be finite and >= 0; use KillRate::Hard for infinity")))
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, KillRate::Finite(g) if *g == 0.0)
    }

    pub fn is_hard(&self) -> bool {
        matches!(self, KillRate::Hard)
    }

    pub fn as_finite(&self) -> Option<f64> {
        match self {
            KillRate::Finite(g) => Some(*g),
            KillRate::Hard => None,
        }
    }

    /// Log survival weight for a total trap exposure `exposure = ∫ ξ(s, X_s) ds`.
    #[inline]
    pub fn log_weight(&self, exposure: f64) -> f64 {
        match self {
            KillRate::Finite(g) => -g * exposure,
            KillRate::Hard if exposure > 0.0 => f64::NEG_INFINITY,
            KillRate::Hard => 0.0,
        }
    }
}

impl fmt::Display for KillRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KillRate::Finite(g) => write!(f, "{g}"),
            KillRate::Hard => f.write_str("inf"),
        }
    }
}

impl Serialize for KillRate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KillRate::Finite(g) => s.serialize_f64(*g),
            KillRate::Hard => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for KillRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(g) => KillRate::finite(g).map_err(serde::de::Error::custom),
            Raw::Text(s) if s == "inf" => Ok(KillRate::Hard),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "gamma must be a nonnegative number or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// Walker law, trap law, trap density and killing rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gamma: KillRate,
    pub walker: JumpKernel,
    pub traps: JumpKernel,
    pub nu: f64,
}

impl ModelParams {
    pub fn new(gamma: KillRate, walker: JumpKernel, traps: JumpKernel, nu: f64) -> Result<Self> {
        if walker.dim() != traps.dim() {
            return Err(Error::DimensionMismatch {
                expected: walker.dim(),
                found: traps.dim(),
            });
        }
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::param("nu", format!("{nu} must be finite and >= 0")));
        }
        Ok(Self {
            gamma,
            walker,
            traps,
            nu,
        })
    }

    /// Simple symmetric walker (rate κ) and traps (rate ρ) on Z^d.
    pub fn simple(dim: usize, gamma: KillRate, kappa: f64, rho: f64, nu: f64) -> Result<Self> {
        Self::new(
            gamma,
            JumpKernel::simple(dim, kappa)?,
            JumpKernel::simple(dim, rho)?,
            nu,
        )
    }

    pub fn dim(&self) -> usize {
        self.walker.dim()
    }

    pub fn kappa(&self) -> f64 {
        self.walker.rate()
    }

    pub fn rho(&self) -> f64 {
        self.traps.rate()
    }

    pub fn with_gamma(&self, gamma: KillRate) -> Self {
        Self {
            gamma,
            ..self.clone()
        }
    }

    pub fn with_nu(&self, nu: f64) -> Self {
        Self { nu, ..self.clone() }
    }

    /// Parameter echo for reports.
    pub fn echo(&self) -> ParamEcho {
        ParamEcho {
            d: self.dim(),
            gamma: self.gamma,
            kappa: self.kappa(),
            rho: self.rho(),
            nu: self.nu,
        }
    }
}

/// Flat copy of the scalar parameters, carried on every estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamEcho {
    pub d: usize,
    pub gamma: KillRate,
    pub kappa: f64,
    pub rho: f64,
    pub nu: f64,
}
