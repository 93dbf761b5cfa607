//! Random walks among Poisson traps on Z^d.
//!
//! A walker `X` jumps at rate κ and is killed at rate γ per trap sharing its
//! site, where the traps are either a Poisson system of independent random
//! walks (mobile, jump rate ρ) or a frozen i.i.d. field (immobile). The crate
//! provides:
//!
//! * [`walk`]: exact event-driven walks, local times, ranges, difference paths;
//! * [`trapfield`]: the Poisson trap field on a certified finite window;
//! * [`pam`]: explicit integrators for the parabolic Anderson model and the
//!   single-walker trap equation;
//! * [`survival`]: independent estimators of quenched and annealed survival;
//! * [`asymptotics`]: rate fits, Green-function constants, decay checks;
//! * [`pathmeasure`]: self-normalized sampling of the annealed path measure.

pub mod asymptotics;
pub mod error;
pub mod model;
pub mod pam;
pub mod parallel;
pub mod pathmeasure;
pub mod stats;
pub mod survival;
pub mod trapfield;
pub mod walk;

pub use error::{Error, Result};
pub use model::{KillRate, ModelParams};
pub use walk::{difference_path, JumpKernel, Site, WalkPath};
