//! Torus mode lattices, spectral fields, the interaction potential and the
//! Wick-renormalized energies built on them.

mod energy;
mod field;
mod interaction;
mod lattice;
mod mode;
mod potential;

pub use energy::{energy_d, energy_v, grad_d, wick_coeffs, EnergyKernel, WickCoeffs};
pub use field::{FieldDocument, SpectralField};
pub use interaction::InteractionSpec;
pub(crate) use lattice::for_each_in_box;
pub use lattice::{smooth_profile, CutoffKind, ModeLattice, PairTables, DEFAULT_MODE_BUDGET};
pub use mode::Mode;
pub use potential::{potential_hat, Potential, Profile};
