//! The non-interacting Bose gas on the torus: particle density, its small-lambda
//! expansion, the chemical potential and condensate diagnostics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::counterterms::{CountertermTable, Entry, Truncated};
use crate::error::{invalid, Error, Result};
use crate::latsum::{for_each_orbit, radial_tail_bound, Compensated};

use crate::two_pi_powi;

/// Riemann zeta at 3/2 by Euler-Maclaurin with N = 32 and six Bernoulli corrections.
pub fn zeta_three_halves() -> f64 {
    zeta(1.5)
}

/// Riemann zeta for real s > 1.
pub fn zeta(s: f64) -> f64 {
    const N: usize = 32;
    // B_2, B_4, ..., B_12
    const BERNOULLI: [f64; 6] = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0, -691.0 / 2730.0];
    let mut acc = Compensated::default();
    for n in (1..N).rev() {
        acc.add((n as f64).powf(-s));
    }
    let n = N as f64;
    acc.add(n.powf(1.0 - s) / (s - 1.0));
    acc.add(0.5 * n.powf(-s));
    // term_j = B_{2j} / (2j)! * s (s+1) ... (s+2j-2) * N^{-s-2j+1}
    let mut rising = s;
    let mut fact = 2.0;
    for (j, b) in BERNOULLI.iter().enumerate() {
        let m = 2 * (j + 1);
        acc.add(b / fact * rising * n.powf(-s - m as f64 + 1.0));
        rising *= (s + m as f64 - 1.0) * (s + m as f64);
        fact *= ((m + 1) * (m + 2)) as f64;
    }
    acc.value()
}

/// Box radius at which the Bose weight has decayed below 1e-17 of its value at the origin.
pub fn auto_k_sum(lambda: f64) -> usize {
    ((40.0 / lambda).sqrt().ceil() as usize).max(4)
}

/// sum over |k|_inf <= k_sum of 1 / (e^{lambda (|k|^2 + shift)} - 1), with a rigorous tail bound.
pub fn bose_sum(lambda: f64, shift: f64, d: usize, k_sum: usize) -> Result<Truncated> {
    if !(lambda > 0.0) || !(shift > 0.0) {
        return Err(invalid("lambda and the spectral shift must be positive"));
    }
    if !(1..=3).contains(&d) {
        return Err(Error::Dimension(d));
    }
    let weight = |r2: f64| 1.0 / (lambda * (r2 + shift)).exp_m1();
    let mut acc = Compensated::default();
    for_each_orbit(d, k_sum as i32, |k, m| acc.add(m as f64 * weight(k.norm2() as f64)));
    let tail = radial_tail_bound(d, k_sum, |r| weight(r * r), 1e-20)?;
    Ok(Truncated { value: acc.value(), tail, k_sum })
}

/// (2pi)^{-d} sum_k 1 / (e^{lambda <k>^2} - 1).
pub fn rho0(lambda: f64, d: usize, k_sum: usize) -> Result<Truncated> {
    let s = bose_sum(lambda, 1.0, d, k_sum)?;
    let scale = two_pi_powi(-(d as i32));
    Ok(Truncated { value: s.value * scale, tail: s.tail * scale, k_sum })
}

fn yukawa(r: f64) -> f64 {
    let l = 2.0 * PI * r;
    (-l).exp() / l
}

fn yukawa_shells(lo: usize, hi: usize) -> f64 {
    let mut acc = Compensated::default();
    for_each_orbit(3, hi as i32, |n, m| {
        if n.sup_norm() as usize >= lo.max(1) {
            acc.add(m as f64 * yukawa(n.norm()));
        }
    });
    acc.value()
}

/// sum over l in 2pi Z^3, 0 < |l/2pi|_inf <= shells, of e^{-|l|} / |l|. The error is the
/// next three shells summed exactly plus, beyond those, (24 m^2 + 2) points per shell
/// each bounded by the value at |l| = 2 pi m.
pub fn yukawa_lattice_sum(shells: usize) -> Result<Entry> {
    let value = yukawa_shells(1, shells);
    let next = yukawa_shells(shells + 1, shells + 3);
    let mut rest = 0.0;
    for m in shells + 4..shells + 200 {
        let mf = m as f64;
        rest += (24.0 * mf * mf + 2.0) * yukawa(mf);
    }
    Ok(Entry { value, error: next + rest })
}

/// Finite-volume constant: -1/(4pi) + (1/(4pi)) sum over shells |n|_inf <= shells.
pub fn c0(shells: usize) -> Result<Entry> {
    let y = yukawa_lattice_sum(shells)?;
    let q = 1.0 / (4.0 * PI);
    Ok(Entry { value: -q + q * y.value, error: q * y.error })
}

/// Both sides of the small-lambda expansion of lambda * (raw mode sum) in 3-d.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonCheck {
    pub lambda: f64,
    /// lambda * sum_k 1/(e^{lambda <k>^2} - 1)
    pub exact: f64,
    /// pi^{3/2} zeta(3/2) / sqrt(lambda)
    pub leading: f64,
    /// -2 pi^2
    pub constant: f64,
    /// 2 pi^2 sum_l e^{-|l|}/|l|
    pub lattice: f64,
    pub residual: f64,
    pub residual_over_sqrt: f64,
    pub tail: f64,
}

pub fn poisson_expansion_check(lambda: f64) -> Result<PoissonCheck> {
    let k = auto_k_sum(lambda);
    let s = bose_sum(lambda, 1.0, 3, k)?;
    let exact = lambda * s.value;
    let leading = PI.powf(1.5) * zeta_three_halves() / lambda.sqrt();
    let constant = -2.0 * PI * PI;
    let lattice = 2.0 * PI * PI * yukawa_lattice_sum(6)?.value;
    let residual = exact - (leading + constant + lattice);
    Ok(PoissonCheck {
        lambda,
        exact,
        leading,
        constant,
        lattice,
        residual,
        residual_over_sqrt: residual / lambda.sqrt(),
        tail: lambda * s.tail,
    })
}

/// Chemical potential and the derived constants of the renormalized interaction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChemicalPotential {
    pub lambda: f64,
    pub theta: f64,
    /// a - 6b - m + 1 - e_lambda
    pub theta_eps: f64,
    pub e_lambda: f64,
    pub m: f64,
    pub rho0: f64,
    /// (2pi)^3 rho0
    pub n0: f64,
    /// Constant shift of the Hamiltonian.
    pub energy_shift: f64,
}

/// Inputs to the chemical potential; a plain struct so that callers can zero entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChemicalInputs {
    pub a: f64,
    pub six_b: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Real-space potential at the origin.
    pub v_origin: f64,
}

impl ChemicalInputs {
    pub fn from_table(table: &CountertermTable) -> Result<Self> {
        if table.d != 3 {
            return Err(Error::NeedsThreeDims("chemical potential"));
        }
        let c0 = table.c0.map(|e| e.value).ok_or(Error::NeedsThreeDims("C0"))?;
        let (c1, c2) = table.continuum.map_or((0.0, 0.0), |m| (m.c1, m.c2));
        Ok(ChemicalInputs {
            a: table.a_eps.value,
            six_b: table.six_b_eps.value,
            c0,
            c1,
            c2,
            v_origin: table.potential.real_space(&[0.0; 3], table.k_sum as i32),
        })
    }
}

pub fn chemical_potential(lambda: f64, table: &CountertermTable, m0: f64) -> Result<ChemicalPotential> {
    chemical_potential_from(lambda, &ChemicalInputs::from_table(table)?, m0)
}

pub fn chemical_potential_from(lambda: f64, c: &ChemicalInputs, m0: f64) -> Result<ChemicalPotential> {
    let critical = zeta_three_halves() / (4.0 * PI).powf(1.5) / lambda.sqrt();
    let theta = critical + c.c0 + c.a - c.six_b + 2.0 * c.c1 + 2.0 * c.c2 - m0;
    let rho = rho0(lambda, 3, auto_k_sum(lambda))?.value;
    let e_lambda = lambda * rho - critical - c.c0 - 0.5 * lambda * c.v_origin;
    let m = m0 - 2.0 * c.c1 - 2.0 * c.c2;
    let theta_eps = c.a - c.six_b - m + 1.0 - e_lambda;
    let vol = two_pi_powi(3);
    Ok(ChemicalPotential {
        lambda,
        theta,
        theta_eps,
        e_lambda,
        m,
        rho0: rho,
        n0: vol * rho,
        energy_shift: 0.5 * lambda * lambda * vol * rho * rho + vol * lambda * rho * theta_eps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condensate {
    pub total: f64,
    pub zero_mode: f64,
    pub fraction: f64,
}

/// Total particle number and zero-mode occupation at chemical potential -theta0.
pub fn condensate_fraction(lambda: f64, theta0: f64, k_sum: usize) -> Result<Condensate> {
    let s = bose_sum(lambda, theta0, 3, k_sum)?;
    let zero = 1.0 / (lambda * theta0).exp_m1();
    Ok(Condensate { total: s.value, zero_mode: zero, fraction: zero / s.value })
}

/// One row of an ideal-gas sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealGasReport {
    pub lambda: f64,
    pub raw_sum: f64,
    pub rho0: f64,
    pub tail: f64,
    pub leading: f64,
    pub c0_term: f64,
    pub remainder: f64,
    pub residual_over_sqrt: f64,
}

pub fn report(lambda: f64) -> Result<IdealGasReport> {
    let k = auto_k_sum(lambda);
    let rho = rho0(lambda, 3, k)?;
    let c0v = c0(4)?.value;
    let leading = zeta_three_halves() / (4.0 * PI * lambda).powf(1.5);
    let poisson = poisson_expansion_check(lambda)?;
    Ok(IdealGasReport {
        lambda,
        raw_sum: rho.value * two_pi_powi(3),
        rho0: rho.value,
        tail: rho.tail,
        leading,
        c0_term: c0v / lambda,
        remainder: rho.value - leading - c0v / lambda,
        residual_over_sqrt: poisson.residual_over_sqrt,
    })
}
