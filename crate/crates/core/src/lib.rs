//! Numerical laboratory for the Hartree / Phi^4 correspondence on the torus.
//!
//! Classical side: mode lattices, Wick-renormalized energies, counterterm sums,
//! Gibbs sampling and Galerkin Langevin dynamics. Quantum side: truncated bosonic
//! Fock spaces, thermal states, coherent states and lower symbols.

pub mod classical;
pub mod counterterms;
pub mod definetti;
pub mod error;
pub mod fock;
pub mod harness;
pub mod ideal_gas;
pub mod langevin;
pub mod persist;
pub(crate) mod latsum;
pub mod quad;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};

pub use num_complex::Complex64;

pub(crate) const TWO_PI: f64 = std::f64::consts::TAU;

/// (2pi)^{p}.
pub(crate) fn two_pi_pow(p: f64) -> f64 {
    TWO_PI.powf(p)
}

/// (2pi)^{p}, integer power.
pub(crate) fn two_pi_powi(p: i32) -> f64 {
    TWO_PI.powi(p)
}
