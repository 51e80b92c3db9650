//! Renormalization constants from truncated lattice sums and reduced quadratures.

mod bsum;
mod mass;

use serde::{Deserialize, Serialize};

pub use bsum::{b_kernel, b_kernel_at};
pub use mass::{c1_c2, c1_c2_eps, c1_c2_eps_brute, MassShifts};

use crate::error::{Error, Result};
use crate::latsum::{for_each_orbit, radial_tail_bound, Compensated};
use crate::spectral::{CutoffKind, Mode, ModeLattice, Potential};
use crate::two_pi_powi;

/// Absolute tail tolerance used when none is given.
pub const DEFAULT_TAIL_TOL: f64 = 1e-8;

/// A truncated lattice sum with its truncation level and tail size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncated {
    pub value: f64,
    /// Rigorous bound where available, otherwise an estimate.
    pub tail: f64,
    pub k_sum: usize,
}

/// Components of the quadratic counterterm and its direct symmetric form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BComponents {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    /// 6b summed directly.
    pub six_b: f64,
    pub k_sum: usize,
}

impl BComponents {
    pub fn recombined(&self) -> f64 {
        self.b1 + 2.0 * self.b2 + 2.0 * self.b3 + self.b4
    }

    /// 6b minus b1 + 2 b2 + 2 b3 + b4.
    pub fn residual(&self) -> f64 {
        self.six_b - self.recombined()
    }
}

fn check(p: &Potential, d: usize) -> Result<()> {
    if !(1..=3).contains(&d) {
        return Err(Error::Dimension(d));
    }
    p.check_dimension(d)
}

/// (2pi)^{-d} sum_{|k|_inf <= k_sum} v^eps(k) / <k>^2 with a rigorous tail bound.
pub fn a_eps(p: &Potential, d: usize, k_sum: usize) -> Result<Truncated> {
    a_eps_with_tol(p, d, k_sum, DEFAULT_TAIL_TOL)
}

pub fn a_eps_with_tol(p: &Potential, d: usize, k_sum: usize, tol: f64) -> Result<Truncated> {
    check(p, d)?;
    let mut acc = Compensated::default();
    for_each_orbit(d, k_sum as i32, |k, m| acc.add(m as f64 * p.hat(k) / k.bracket2()));
    let scale = two_pi_powi(-(d as i32));
    let value = acc.value() * scale;
    let tail = scale * radial_tail_bound(d, k_sum, |r| p.hat_at(r) / (1.0 + r * r), 1e-3 * tol.max(1e-300))?;
    if tail > tol {
        return Err(Error::Tail { value, bound: tail, tol, k_sum });
    }
    Ok(Truncated { value, tail, k_sum })
}

/// Cutoff analog: (2pi)^{-d} sum over the lattice of chi^2 v^eps / <k>^2.
pub fn a_eps_n(p: &Potential, lattice: &ModeLattice) -> f64 {
    let mut acc = Compensated::default();
    for ((&k, &chi), &b) in lattice.modes().iter().zip(lattice.chi()).zip(lattice.bracket2()) {
        acc.add(chi * chi * p.hat(k) / b);
    }
    acc.value() * two_pi_powi(-(lattice.dim() as i32))
}

/// All four components and the direct form over {|k1|, |k2|, |k1+k2| <= k_sum} (sup norm).
/// The region is invariant under permutations of (k1, k2, -(k1+k2)), so the recombination
/// identity holds at every truncation. Cost grows like k_sum^{2d}.
pub fn b_eps_components(p: &Potential, d: usize, k_sum: usize) -> Result<BComponents> {
    check(p, d)?;
    let vhat = |k: Mode| p.hat(k);
    let s = bsum::direct_sums(d, k_sum as i32, &vhat, &|_| 1.0);
    Ok(scale_components(s, d, k_sum))
}

fn scale_components(s: [f64; 5], d: usize, k_sum: usize) -> BComponents {
    let c = two_pi_powi(-2 * d as i32);
    BComponents { six_b: s[0] * c, b1: s[1] * c, b2: s[2] * c, b3: s[3] * c, b4: s[4] * c, k_sum }
}

/// 6b alone at large truncation, with the tail estimated as twice the change from k_sum/2
/// (the tail decays like 1/k_sum). Not a rigorous bound.
pub fn six_b_eps(p: &Potential, d: usize, k_sum: usize) -> Result<Truncated> {
    check(p, d)?;
    let vhat = |k: Mode| p.hat(k);
    let one = |_: Mode| 1.0;
    let value = bsum::six_b_convolved(d, k_sum as i32, &vhat, &one);
    let half = bsum::six_b_convolved(d, (k_sum / 2).max(1) as i32, &vhat, &one);
    Ok(Truncated { value, tail: 2.0 * (value - half).abs(), k_sum })
}

/// Cutoff analog weighted by chi(k1)^2 chi(k2)^2 chi(k1+k2)^2.
pub fn b_eps_n(p: &Potential, lattice: &ModeLattice) -> Result<BComponents> {
    let d = lattice.dim();
    check(p, d)?;
    if lattice.is_empty() {
        return Ok(BComponents { b1: 0.0, b2: 0.0, b3: 0.0, b4: 0.0, six_b: 0.0, k_sum: 0 });
    }
    let r = lattice.modes().iter().map(|k| k.sup_norm()).max().unwrap_or(0);
    let weight = |k: Mode| lattice.index_of(k).map_or(0.0, |i| lattice.chi()[i].powi(2));
    let vhat = |k: Mode| p.hat(k);
    let s = bsum::direct_sums(d, r, &vhat, &weight);
    Ok(scale_components(s, d, r as usize))
}

/// Cutoff quadratic counterterm via convolution; for lattices too large for the double loop.
pub fn six_b_eps_n(p: &Potential, lattice: &ModeLattice) -> Result<f64> {
    let d = lattice.dim();
    check(p, d)?;
    let r = lattice.modes().iter().map(|k| k.sup_norm()).max().unwrap_or(0);
    if r == 0 && lattice.is_empty() {
        return Ok(0.0);
    }
    let weight = |k: Mode| lattice.index_of(k).map_or(0.0, |i| lattice.chi()[i].powi(2));
    let vhat = |k: Mode| p.hat(k);
    Ok(bsum::six_b_convolved(d, r.max(1), &vhat, &weight))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub value: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffEntries {
    pub n: usize,
    pub kind: CutoffKind,
    pub a_eps_n: f64,
    pub b: BComponents,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedShifts {
    pub t: f64,
    pub shifts: MassShifts,
}

/// Everything needed to compose the mass offset, with truncation metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountertermTable {
    pub potential: Potential,
    pub d: usize,
    pub k_sum: usize,
    pub a_eps: Truncated,
    /// Components from the direct loop at `b_k_sum`.
    pub b: BComponents,
    /// 6b at `k_sum` via convolution.
    pub six_b_eps: Truncated,
    pub c0: Option<Entry>,
    pub continuum: Option<MassShifts>,
    pub lattice_shifts: Option<TimedShifts>,
    pub cutoff: Option<CutoffEntries>,
}

#[derive(Clone, Debug)]
pub struct TableRequest {
    pub d: usize,
    pub k_sum: usize,
    /// Truncation for the O(k^{2d}) component loop.
    pub b_k_sum: usize,
    pub time: Option<f64>,
    pub cutoff: Option<(usize, CutoffKind)>,
}

impl CountertermTable {
    pub fn compute(p: &Potential, req: &TableRequest) -> Result<Self> {
        let a = a_eps(p, req.d, req.k_sum)?;
        let b = b_eps_components(p, req.d, req.b_k_sum)?;
        let six_b = six_b_eps(p, req.d, req.k_sum)?;
        let three = req.d == 3;
        let c0 = if three {
            let v = crate::ideal_gas::c0(4)?;
            Some(Entry { value: v.value, error: v.error })
        } else {
            None
        };
        let continuum = if three && p.is_radial_smooth() { Some(c1_c2(&p.with_eps(1.0)?)?) } else { None };
        let lattice_shifts = match (three, req.time) {
            (true, Some(t)) => Some(TimedShifts { t, shifts: c1_c2_eps(p, t, req.k_sum)? }),
            _ => None,
        };
        let cutoff = match req.cutoff {
            Some((n, kind)) => {
                let lattice = ModeLattice::build(req.d, n, kind)?;
                Some(CutoffEntries { n, kind, a_eps_n: a_eps_n(p, &lattice), b: b_eps_n(p, &lattice)? })
            }
            None => None,
        };
        Ok(CountertermTable {
            potential: p.clone(),
            d: req.d,
            k_sum: req.k_sum,
            a_eps: a,
            b,
            six_b_eps: six_b,
            c0,
            continuum,
            lattice_shifts,
            cutoff,
        })
    }

    /// Flat (name, value, error) rows for CSV output.
    pub fn rows(&self) -> Vec<(String, f64, f64)> {
        let mut out = vec![
            ("a_eps".to_string(), self.a_eps.value, self.a_eps.tail),
            ("b1".into(), self.b.b1, f64::NAN),
            ("b2".into(), self.b.b2, f64::NAN),
            ("b3".into(), self.b.b3, f64::NAN),
            ("b4".into(), self.b.b4, f64::NAN),
            ("six_b_components_direct".into(), self.b.six_b, self.b.residual().abs()),
            ("six_b_eps".into(), self.six_b_eps.value, self.six_b_eps.tail),
        ];
        if let Some(c0) = self.c0 {
            out.push(("c0".into(), c0.value, c0.error));
        }
        if let Some(m) = self.continuum {
            out.push(("C1".into(), m.c1, m.error));
            out.push(("C2".into(), m.c2, m.error));
        }
        if let Some(ts) = &self.lattice_shifts {
            out.push((format!("c1_eps(t={})", ts.t), ts.shifts.c1, ts.shifts.error));
            out.push((format!("c2_eps(t={})", ts.t), ts.shifts.c2, ts.shifts.error));
        }
        if let Some(c) = &self.cutoff {
            out.push(("a_eps_N".into(), c.a_eps_n, 0.0));
            out.push(("six_b_eps_N".into(), c.b.six_b, c.b.residual().abs()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_profile_gives_single_term() {
        let p = Potential::table(vec![0.0], vec![1.0], 1.0).unwrap();
        for d in 1..=3 {
            let a = a_eps(&p, d, 5).unwrap();
            assert!((a.value - two_pi_powi(-(d as i32))).abs() < 1e-16);
            assert_eq!(a.tail, 0.0);
        }
    }

    #[test]
    fn tail_error_carries_bound() {
        let p = Potential::gaussian(1.0, 0.05).unwrap();
        match a_eps(&p, 3, 4) {
            Err(Error::Tail { bound, .. }) => assert!(bound > DEFAULT_TAIL_TOL),
            other => panic!("expected tail error, got {other:?}"),
        }
    }

    #[test]
    fn cutoff_a_matches_full_sum_on_large_ball() {
        let p = Potential::gaussian(1.0, 0.5).unwrap();
        let full = a_eps(&p, 3, 20).unwrap();
        // the ball of radius 40 contains the box of radius 20, and the remainder is ~e^{-100}
        let lattice = ModeLattice::build(3, 40, CutoffKind::Sharp).unwrap();
        assert!((a_eps_n(&p, &lattice) - full.value).abs() < 1e-12);
    }

    #[test]
    fn identity_holds_at_each_truncation() {
        let p = Potential::gaussian(1.0, 0.3).unwrap();
        for k in [1, 2, 5, 9] {
            let b = b_eps_components(&p, 3, k).unwrap();
            assert!(b.residual().abs() <= 1e-14, "k={k} residual {}", b.residual());
        }
    }

    #[test]
    fn cutoff_identity_and_brute_force() {
        let p = Potential::gaussian(1.0, 1.0).unwrap();
        let lattice = ModeLattice::build(1, 1, CutoffKind::Sharp).unwrap();
        let b = b_eps_n(&p, &lattice).unwrap();
        let mut brute = 0.0;
        for &k1 in lattice.modes() {
            for &k2 in lattice.modes() {
                if lattice.index_of(k1 + k2).is_none() {
                    continue;
                }
                let (v1, v2) = (p.hat(k1), p.hat(k2));
                brute += (v1 * v1 + v1 * v2) / (k1.bracket2() * k2.bracket2() * (k1 + k2).bracket2());
            }
        }
        brute /= two_pi_powi(2);
        assert!((b.six_b - brute).abs() < 1e-16);
        assert!(b.residual().abs() < 1e-16);
        for kind in [CutoffKind::Smooth, CutoffKind::Spectral] {
            let lattice = ModeLattice::build(3, 3, kind).unwrap();
            let b = b_eps_n(&p, &lattice).unwrap();
            assert!(b.residual().abs() <= 1e-14);
            assert!((six_b_eps_n(&p, &lattice).unwrap() - b.six_b).abs() < 1e-14);
        }
    }

    #[test]
    fn convolution_path_agrees_with_components() {
        let p = Potential::gaussian(1.0, 0.4).unwrap();
        let b = b_eps_components(&p, 3, 8).unwrap();
        let conv = six_b_eps(&p, 3, 8).unwrap();
        assert!((b.six_b - conv.value).abs() < 1e-14);
    }
}
