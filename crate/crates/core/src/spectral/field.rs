use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{CutoffKind, Mode, ModeLattice};
use crate::error::{invalid, Error, Result};
use crate::TWO_PI;

/// u = sum_k z_k e_k with e_k(x) = (2pi)^{-d/2} e^{ik.x}.
#[derive(Clone, Debug)]
pub struct SpectralField {
    lattice: Arc<ModeLattice>,
    coeffs: Vec<Complex64>,
}

/// Serialized form of a lattice together with field coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldDocument {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub kind: CutoffKind,
    pub modes: Vec<Vec<i32>>,
    pub chi: Vec<f64>,
    pub coeffs: Vec<[f64; 2]>,
}

impl SpectralField {
    pub fn new(lattice: Arc<ModeLattice>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != lattice.len() {
            return Err(invalid(format!(
                "{} coefficients for a lattice of {} modes",
                coeffs.len(),
                lattice.len()
            )));
        }
        Ok(SpectralField { lattice, coeffs })
    }

    pub fn zeros(lattice: Arc<ModeLattice>) -> Self {
        let coeffs = vec![Complex64::new(0.0, 0.0); lattice.len()];
        SpectralField { lattice, coeffs }
    }

    pub fn lattice(&self) -> &Arc<ModeLattice> {
        &self.lattice
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, k: Mode) -> Option<Complex64> {
        self.lattice.index_of(k).map(|i| self.coeffs[i])
    }

    /// ||u||^2 in L^2, which by Parseval is sum |z_k|^2.
    pub fn norm2(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum()
    }

    /// <self, other> in L^2, antilinear in the first slot.
    pub fn inner(&self, other: &SpectralField) -> Result<Complex64> {
        if !self.lattice.same_as(&other.lattice) {
            return Err(Error::LatticeMismatch);
        }
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.conj() * b).sum())
    }

    /// Pointwise value u(x).
    pub fn eval(&self, x: &[f64]) -> Complex64 {
        let norm = TWO_PI.powf(-0.5 * self.lattice.dim() as f64);
        let s: Complex64 = self
            .lattice
            .modes()
            .iter()
            .zip(&self.coeffs)
            .map(|(k, z)| z * Complex64::from_polar(1.0, k.dot(x)))
            .sum();
        s * norm
    }

    pub fn to_document(&self) -> FieldDocument {
        let d = self.lattice.dim();
        FieldDocument {
            d,
            n: self.lattice.cutoff(),
            kind: self.lattice.kind(),
            modes: self.lattice.modes().iter().map(|k| k.components(d)).collect(),
            chi: self.lattice.chi().to_vec(),
            coeffs: self.coeffs.iter().map(|z| [z.re, z.im]).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_document())?)
    }

    /// Rebuilds the lattice from (d, N, kind) and checks it against the stored modes.
    pub fn from_document(doc: &FieldDocument) -> Result<Self> {
        let lattice = ModeLattice::build(doc.d, doc.n, doc.kind)?;
        let modes: Vec<Vec<i32>> = lattice.modes().iter().map(|k| k.components(doc.d)).collect();
        let lattice = if modes == doc.modes {
            lattice
        } else {
            ModeLattice::from_modes(doc.d, doc.modes.iter().map(|k| Mode::new(k)).collect())?
        };
        let coeffs = doc.coeffs.iter().map(|c| Complex64::new(c[0], c[1])).collect();
        Self::new(Arc::new(lattice), coeffs)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let lat = Arc::new(ModeLattice::build(2, 2, CutoffKind::Smooth).unwrap());
        let coeffs = (0..lat.len()).map(|i| Complex64::new(i as f64, -0.5 * i as f64)).collect();
        let u = SpectralField::new(lat, coeffs).unwrap();
        let back = SpectralField::from_json(&u.to_json().unwrap()).unwrap();
        assert_eq!(back.coeffs(), u.coeffs());
        assert_eq!(back.lattice().chi(), u.lattice().chi());
    }

    #[test]
    fn coefficient_count_checked() {
        let lat = Arc::new(ModeLattice::build(1, 1, CutoffKind::Sharp).unwrap());
        assert!(SpectralField::new(lat, vec![Complex64::new(0.0, 0.0); 2]).is_err());
    }

    #[test]
    fn parseval_against_grid() {
        let lat = Arc::new(ModeLattice::build(1, 3, CutoffKind::Sharp).unwrap());
        let coeffs = (0..lat.len()).map(|i| Complex64::new((i as f64).sin(), (i as f64).cos())).collect();
        let u = SpectralField::new(lat, coeffs).unwrap();
        let n = 16;
        let h = TWO_PI / n as f64;
        let grid: f64 = (0..n).map(|j| u.eval(&[j as f64 * h]).norm_sqr() * h).sum();
        assert!((grid - u.norm2()).abs() < 1e-12 * u.norm2());
    }
}
