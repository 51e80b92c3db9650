use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::TWO_PI;

pub const DEFAULT_MODE_BUDGET: usize = 4_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffKind {
    /// Euclidean ball |k| <= N.
    Sharp,
    /// Spectral projector <k>^2 <= (N+1)^2.
    Spectral,
    /// chi(<k>/(N+1)) with the polynomial bump of [`smooth_profile`].
    Smooth,
}

impl std::str::FromStr for CutoffKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sharp" => Ok(CutoffKind::Sharp),
            "spectral" => Ok(CutoffKind::Spectral),
            "smooth" => Ok(CutoffKind::Smooth),
            other => Err(Error::Config(format!("unknown cutoff kind '{other}'"))),
        }
    }
}

/// 1 on [0, 1/2], quintic smoothstep down to 0 at 1 (C^2 at both joints).
pub fn smooth_profile(y: f64) -> f64 {
    if y <= 0.5 {
        1.0
    } else if y >= 1.0 {
        0.0
    } else {
        let s = 2.0 * (y - 0.5);
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// Difference set of a lattice and the map (a, b) -> index of k_a - k_b.
#[derive(Debug)]
pub struct PairTables {
    pub differences: Vec<Mode>,
    index: HashMap<Mode, usize>,
    pub zero: usize,
    /// Row-major K x K table of difference indices.
    pub pair_diff: Vec<u32>,
    /// Index of -q for every difference q.
    pub negated: Vec<usize>,
}

impl PairTables {
    pub fn index_of(&self, q: Mode) -> Option<usize> {
        self.index.get(&q).copied()
    }
}

#[derive(Debug)]
pub struct ModeLattice {
    dim: usize,
    cutoff: usize,
    kind: CutoffKind,
    modes: Vec<Mode>,
    chi: Vec<f64>,
    bracket2: Vec<f64>,
    index: HashMap<Mode, usize>,
    pairs: OnceLock<PairTables>,
}

fn check_dim(d: usize) -> Result<()> {
    if (1..=3).contains(&d) {
        Ok(())
    } else {
        Err(Error::Dimension(d))
    }
}

/// Calls `f` on every point of the box [-r, r]^d in lexicographic order.
pub(crate) fn for_each_in_box(d: usize, r: i32, mut f: impl FnMut(Mode)) {
    let range = |active: bool| if active { -r..=r } else { 0..=0 };
    for a in range(true) {
        for b in range(d >= 2) {
            for c in range(d >= 3) {
                f(Mode([a, b, c]));
            }
        }
    }
}

impl ModeLattice {
    pub fn build(d: usize, n: usize, kind: CutoffKind) -> Result<Self> {
        Self::build_with_budget(d, n, kind, DEFAULT_MODE_BUDGET)
    }

    pub fn build_with_budget(d: usize, n: usize, kind: CutoffKind, budget: usize) -> Result<Self> {
        check_dim(d)?;
        if n == 0 {
            return Err(Error::Invalid("cutoff level N must be at least 1".into()));
        }
        let nf = n as f64;
        // rough ball volume, enough to refuse absurd requests before enumerating
        let unit_ball = [2.0, std::f64::consts::PI, 4.0 / 3.0 * std::f64::consts::PI][d - 1];
        let estimate = unit_ball * (nf + 1.0).powi(d as i32);
        if estimate > 2.0 * budget as f64 {
            return Err(Error::ModeBudget { cutoff: n, modes: estimate as usize, budget });
        }
        let n2 = (n * n) as i64;
        let mut modes = Vec::new();
        let mut chi = Vec::new();
        for_each_in_box(d, n as i32, |k| {
            let k2 = k.norm2();
            let w = match kind {
                CutoffKind::Sharp => (k2 <= n2) as u8 as f64,
                CutoffKind::Spectral => (k2 <= n2 + 2 * n as i64) as u8 as f64,
                CutoffKind::Smooth => smooth_profile(k.bracket2().sqrt() / (nf + 1.0)),
            };
            if w > 0.0 {
                modes.push(k);
                chi.push(w);
            }
        });
        if modes.len() > budget {
            return Err(Error::ModeBudget { cutoff: n, modes: modes.len(), budget });
        }
        Ok(Self::assemble(d, n, kind, modes, chi))
    }

    /// Lattice on an explicit symmetric mode set with sharp weights.
    pub fn from_modes(d: usize, modes: Vec<Mode>) -> Result<Self> {
        check_dim(d)?;
        let chi = vec![1.0; modes.len()];
        let cutoff = modes.iter().map(|k| k.sup_norm()).max().unwrap_or(0).max(1) as usize;
        let lat = Self::assemble(d, cutoff, CutoffKind::Sharp, modes, chi);
        if lat.modes.iter().any(|&k| lat.index_of(-k).is_none()) {
            return Err(Error::AsymmetricModes);
        }
        if lat.index.len() != lat.modes.len() {
            return Err(Error::Invalid("duplicate modes".into()));
        }
        Ok(lat)
    }

    fn assemble(d: usize, n: usize, kind: CutoffKind, modes: Vec<Mode>, chi: Vec<f64>) -> Self {
        let bracket2 = modes.iter().map(|k| k.bracket2()).collect();
        let index = modes.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        ModeLattice { dim: d, cutoff: n, kind, modes, chi, bracket2, index, pairs: OnceLock::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }
    pub fn kind(&self) -> CutoffKind {
        self.kind
    }
    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }
    pub fn chi(&self) -> &[f64] {
        &self.chi
    }
    /// <k>^2 per mode.
    pub fn bracket2(&self) -> &[f64] {
        &self.bracket2
    }
    /// Mode count K, which is also Tr P.
    pub fn len(&self) -> usize {
        self.modes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
    pub fn index_of(&self, k: Mode) -> Option<usize> {
        self.index.get(&k).copied()
    }

    /// a_P = (2pi)^{-d} sum chi^2 / <k>^2.
    pub fn wick_constant(&self) -> f64 {
        let s: f64 = self.chi.iter().zip(&self.bracket2).map(|(c, b)| c * c / b).sum();
        s / TWO_PI.powi(self.dim as i32)
    }

    /// Prior variance chi^2 / <k>^2 of each mode under the free field.
    pub fn free_variance(&self) -> Vec<f64> {
        self.chi.iter().zip(&self.bracket2).map(|(c, b)| c * c / b).collect()
    }

    pub fn same_as(&self, other: &ModeLattice) -> bool {
        std::ptr::eq(self, other)
            || (self.dim == other.dim
                && self.kind == other.kind
                && self.modes == other.modes
                && self.chi == other.chi)
    }

    pub fn pairs(&self) -> &PairTables {
        self.pairs.get_or_init(|| {
            let k = self.modes.len();
            let mut diffs: Vec<Mode> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for &a in &self.modes {
                for &b in &self.modes {
                    let q = a - b;
                    if seen.insert(q) {
                        diffs.push(q);
                    }
                }
            }
            diffs.sort();
            let index: HashMap<Mode, usize> = diffs.iter().enumerate().map(|(i, &q)| (q, i)).collect();
            let mut pair_diff = Vec::with_capacity(k * k);
            for &a in &self.modes {
                for &b in &self.modes {
                    pair_diff.push(index[&(a - b)] as u32);
                }
            }
            let negated = diffs.iter().map(|&q| index[&(-q)]).collect();
            let zero = if k > 0 { index[&Mode::ZERO] } else { 0 };
            PairTables { differences: diffs, index, zero, pair_diff, negated }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_sharp_cutoff() {
        let lat = ModeLattice::build(1, 1, CutoffKind::Sharp).unwrap();
        let ks: Vec<i32> = lat.modes().iter().map(|m| m.0[0]).collect();
        assert_eq!(ks, vec![-1, 0, 1]);
        assert_eq!(lat.bracket2(), &[2.0, 1.0, 2.0]);
    }

    #[test]
    fn three_dimensional_ball_has_seven_modes() {
        let lat = ModeLattice::build(3, 1, CutoffKind::Sharp).unwrap();
        assert_eq!(lat.len(), 7);
    }

    #[test]
    fn spectral_cutoff_includes_diagonals() {
        // <k>^2 <= 4 admits |k|^2 <= 3
        let lat = ModeLattice::build(3, 1, CutoffKind::Spectral).unwrap();
        assert_eq!(lat.len(), 27);
    }

    #[test]
    fn smooth_lattice_in_two_dims() {
        let lat = ModeLattice::build(2, 2, CutoffKind::Smooth).unwrap();
        for (k, &c) in lat.modes().iter().zip(lat.chi()) {
            assert!(k.bracket2().sqrt() < 3.0);
            assert!(c > 0.0 && c <= 1.0);
        }
        assert_eq!(lat.chi()[lat.index_of(Mode::ZERO).unwrap()], 1.0);
        // every mode with <k> < 3 is present: |k|^2 <= 7 in the 5x5 box
        let expected = (-2..=2)
            .flat_map(|a| (-2..=2).map(move |b| a * a + b * b))
            .filter(|&n2| 1 + n2 < 9)
            .count();
        assert_eq!(lat.len(), expected);
    }

    #[test]
    fn smooth_profile_shape() {
        assert_eq!(smooth_profile(0.3), 1.0);
        assert_eq!(smooth_profile(0.5), 1.0);
        assert_eq!(smooth_profile(1.0), 0.0);
        assert!((smooth_profile(0.75) - 0.5).abs() < 1e-15);
        let mut prev = 1.0;
        for i in 0..=1000 {
            let v = smooth_profile(0.5 + 0.0005 * i as f64);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn rejects_bad_dimension_and_budget() {
        assert!(matches!(ModeLattice::build(4, 2, CutoffKind::Sharp), Err(Error::Dimension(4))));
        assert!(matches!(
            ModeLattice::build_with_budget(3, 50, CutoffKind::Sharp, 1000),
            Err(Error::ModeBudget { .. })
        ));
    }

    #[test]
    fn wick_constant_small_lattice() {
        let lat = ModeLattice::build(1, 1, CutoffKind::Sharp).unwrap();
        assert!((lat.wick_constant() - 1.0 / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn difference_table() {
        let lat = ModeLattice::build(1, 2, CutoffKind::Sharp).unwrap();
        let p = lat.pairs();
        assert_eq!(p.differences.len(), 9);
        assert_eq!(p.differences[p.zero], Mode::ZERO);
        for (i, &q) in p.differences.iter().enumerate() {
            assert_eq!(p.differences[p.negated[i]], -q);
        }
    }

    #[test]
    fn from_modes_requires_symmetry() {
        assert!(ModeLattice::from_modes(1, vec![Mode::new(&[0]), Mode::new(&[1])]).is_err());
        assert!(ModeLattice::from_modes(1, vec![Mode::ZERO]).is_ok());
    }
}
