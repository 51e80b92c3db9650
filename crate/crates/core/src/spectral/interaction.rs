use std::sync::Arc;

use super::ModeLattice;

/// Mass offset and Wick constant entering the renormalized energy D.
#[derive(Clone, Debug)]
pub struct InteractionSpec {
    lattice: Arc<ModeLattice>,
    /// Coefficient of -int :|u|^2: in D.
    pub theta: f64,
    /// Renormalized mass m = m0 - 2 C1 - 2 C2.
    pub m: f64,
    /// Bare mass.
    pub m0: f64,
    /// a_P of the lattice.
    pub wick: f64,
    /// Whether theta was composed from counterterms rather than supplied.
    pub composed: bool,
}

impl InteractionSpec {
    /// Desk mode: theta supplied directly.
    pub fn desk(lattice: Arc<ModeLattice>, theta: f64) -> Self {
        let wick = lattice.wick_constant();
        InteractionSpec { lattice, theta, m: 0.0, m0: 0.0, wick, composed: false }
    }

    /// theta = a - 6b - m + 1 with m = m0 - 2 C1 - 2 C2.
    pub fn composed(lattice: Arc<ModeLattice>, a: f64, six_b: f64, m0: f64, c1: f64, c2: f64) -> Self {
        let m = m0 - 2.0 * c1 - 2.0 * c2;
        let wick = lattice.wick_constant();
        InteractionSpec { lattice, theta: a - six_b - m + 1.0, m, m0, wick, composed: true }
    }

    pub fn lattice(&self) -> &Arc<ModeLattice> {
        &self.lattice
    }
}
