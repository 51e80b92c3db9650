use serde::{Deserialize, Serialize};

use super::{Mode, ModeLattice};
use crate::error::{invalid, Error, Result};
use crate::TWO_PI;

/// Radial Fourier profile of the pair interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Profile {
    /// exp(-c |k|^2)
    Gaussian { c: f64 },
    /// (1 + |k|^2)^{-beta/2}
    Bessel { beta: f64 },
    /// Piecewise linear in |k| through (radii[i], values[i]); zero past the last radius.
    Table { radii: Vec<f64>, values: Vec<f64> },
    /// Zero coupling. Breaks the v(0) = 1 normalization on purpose.
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub profile: Profile,
    pub eps: f64,
}

impl Potential {
    pub fn gaussian(c: f64, eps: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(invalid("Gaussian width c must be positive"));
        }
        Self::with_profile(Profile::Gaussian { c }, eps)
    }

    pub fn bessel(beta: f64, eps: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(invalid("Bessel exponent must be positive"));
        }
        Self::with_profile(Profile::Bessel { beta }, eps)
    }

    pub fn table(radii: Vec<f64>, values: Vec<f64>, eps: f64) -> Result<Self> {
        if radii.is_empty() || radii.len() != values.len() {
            return Err(invalid("table needs matching, non-empty radii and values"));
        }
        if radii[0] != 0.0 || values[0] != 1.0 {
            return Err(invalid("table must start at radius 0 with value 1"));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("table radii must increase"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("table values must lie in [0, 1]"));
        }
        Self::with_profile(Profile::Table { radii, values }, eps)
    }

    pub fn off() -> Self {
        Potential { profile: Profile::Off, eps: 1.0 }
    }

    fn with_profile(profile: Profile, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(invalid(format!("scaling eps={eps} outside (0, 1]")));
        }
        Ok(Potential { profile, eps })
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::with_profile(self.profile.clone(), eps)
    }

    /// Reject profiles whose decay is too slow for sums in dimension d.
    pub fn check_dimension(&self, d: usize) -> Result<()> {
        match self.profile {
            Profile::Bessel { beta } if beta <= d as f64 => Err(Error::Unsupported(format!(
                "Bessel exponent {beta} must exceed the dimension {d}"
            ))),
            _ => Ok(()),
        }
    }

    /// Unscaled profile at radius r.
    pub fn profile_at(&self, r: f64) -> f64 {
        match &self.profile {
            Profile::Gaussian { c } => (-c * r * r).exp(),
            Profile::Bessel { beta } => (1.0 + r * r).powf(-0.5 * beta),
            Profile::Table { radii, values } => {
                let last = radii.len() - 1;
                if r > radii[last] {
                    return 0.0;
                }
                if last == 0 {
                    return values[0];
                }
                let i = radii.partition_point(|&x| x <= r).clamp(1, last);
                let t = (r - radii[i - 1]) / (radii[i] - radii[i - 1]);
                values[i - 1] + t * (values[i] - values[i - 1])
            }
            Profile::Off => 0.0,
        }
    }

    /// Radial derivative of the unscaled profile.
    pub fn profile_slope(&self, r: f64) -> f64 {
        match &self.profile {
            Profile::Gaussian { c } => -2.0 * c * r * (-c * r * r).exp(),
            Profile::Bessel { beta } => -beta * r * (1.0 + r * r).powf(-0.5 * beta - 1.0),
            Profile::Table { radii, values } => {
                let last = radii.len() - 1;
                if last == 0 || r >= radii[last] {
                    return 0.0;
                }
                let i = radii.partition_point(|&x| x <= r).clamp(1, last);
                (values[i] - values[i - 1]) / (radii[i] - radii[i - 1])
            }
            Profile::Off => 0.0,
        }
    }

    /// Integral of t * profile(t) over [0, r].
    pub fn profile_moment(&self, r: f64) -> f64 {
        match &self.profile {
            Profile::Gaussian { c } => -(-c * r * r).exp_m1() / (2.0 * c),
            Profile::Bessel { beta } => {
                let q = 1.0 - 0.5 * beta;
                if q.abs() < 1e-12 {
                    0.5 * (r * r).ln_1p()
                } else {
                    ((1.0 + r * r).powf(q) - 1.0) / (2.0 * q)
                }
            }
            Profile::Table { radii, values } => {
                let mut acc = 0.0;
                for i in 1..radii.len() {
                    let (a, b) = (radii[i - 1], radii[i]);
                    if r <= a {
                        break;
                    }
                    let hi = r.min(b);
                    let slope = (values[i] - values[i - 1]) / (b - a);
                    let c0 = values[i - 1] - slope * a;
                    acc += c0 * 0.5 * (hi * hi - a * a) + slope * (hi.powi(3) - a.powi(3)) / 3.0;
                }
                acc
            }
            Profile::Off => 0.0,
        }
    }

    pub fn is_radial_smooth(&self) -> bool {
        matches!(self.profile, Profile::Gaussian { .. } | Profile::Bessel { .. })
    }

    /// Scaled value at radius r: profile(eps r).
    #[inline]
    pub fn hat_at(&self, r: f64) -> f64 {
        self.profile_at(self.eps * r)
    }

    /// v^eps(k) = v(eps k).
    #[inline]
    pub fn hat(&self, k: Mode) -> f64 {
        self.hat_at(k.norm())
    }

    /// Values on the difference set of a lattice, in the order of `lattice.pairs()`.
    pub fn on_differences(&self, lattice: &ModeLattice) -> Vec<f64> {
        lattice.pairs().differences.iter().map(|&q| self.hat(q)).collect()
    }

    /// Periodized real-space potential (2pi)^{-d} sum_{|k|_inf <= k_max} v^eps(k) e^{ik.x}.
    pub fn real_space(&self, x: &[f64], k_max: i32) -> f64 {
        let d = x.len();
        let mut acc = 0.0;
        super::lattice::for_each_in_box(d, k_max, |k| {
            acc += self.hat(k) * k.dot(x).cos();
        });
        acc / TWO_PI.powi(d as i32)
    }
}

/// v^eps(k) for a potential and a mode.
pub fn potential_hat(p: &Potential, k: Mode) -> f64 {
    p.hat(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_values() {
        let g = Potential::gaussian(1.0, 0.5).unwrap();
        assert!((g.hat(Mode::new(&[2, 0, 0])) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(g.hat(Mode::ZERO), 1.0);
        let b = Potential::bessel(4.0, 1.0).unwrap();
        assert!((b.hat(Mode::new(&[1, 0, 0])) - 0.25).abs() < 1e-15);
        assert_eq!(b.hat(Mode::ZERO), 1.0);
    }

    #[test]
    fn table_interpolates() {
        let t = Potential::table(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.0], 1.0).unwrap();
        assert!((t.profile_at(0.5) - 0.75).abs() < 1e-15);
        assert!((t.profile_at(1.5) - 0.25).abs() < 1e-15);
        assert_eq!(t.profile_at(3.0), 0.0);
        assert!((t.profile_slope(0.5) + 0.5).abs() < 1e-15);
        // moment by hand on [0,1]: int t(1 - t/2) = 1/2 - 1/6
        assert!((t.profile_moment(1.0) - (0.5 - 1.0 / 6.0)).abs() < 1e-15);
        assert!(Potential::table(vec![0.0], vec![0.5], 1.0).is_err());
    }

    #[test]
    fn moments_match_numerical_integral() {
        for p in [Potential::gaussian(1.3, 1.0).unwrap(), Potential::bessel(4.5, 1.0).unwrap()] {
            let r = 2.3;
            let n = 20000;
            let h = r / n as f64;
            let mut s = 0.0;
            for i in 0..=n {
                let t = i as f64 * h;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * t * p.profile_at(t);
            }
            s *= h / 3.0;
            assert!((s - p.profile_moment(r)).abs() < 1e-12);
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let p = Potential::bessel(5.0, 1.0).unwrap();
        let h = 1e-6;
        let fd = (p.profile_at(0.7 + h) - p.profile_at(0.7 - h)) / (2.0 * h);
        assert!((fd - p.profile_slope(0.7)).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Potential::gaussian(-1.0, 0.5).is_err());
        assert!(Potential::gaussian(1.0, 0.0).is_err());
        assert!(Potential::gaussian(1.0, 1.5).is_err());
        assert!(Potential::bessel(2.0, 0.5).unwrap().check_dimension(3).is_err());
    }
}
