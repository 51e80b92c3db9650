use std::sync::Arc;

use num_complex::Complex64;

use super::{InteractionSpec, Mode, ModeLattice, Potential, SpectralField};
use crate::error::{Error, Result};
use crate::two_pi_pow;

/// Fourier coefficients W_q of :|u|^2: on the difference set of the lattice.
#[derive(Clone, Debug)]
pub struct WickCoeffs {
    lattice: Arc<ModeLattice>,
    pub values: Vec<Complex64>,
}

impl WickCoeffs {
    pub fn differences(&self) -> &[Mode] {
        &self.lattice.pairs().differences
    }

    /// W_q, zero for q outside the difference set.
    pub fn get(&self, q: Mode) -> Complex64 {
        match self.lattice.pairs().index_of(q) {
            Some(i) => self.values[i],
            None => Complex64::new(0.0, 0.0),
        }
    }
}

/// Precomputed potential on the difference set; evaluates D, V and grad D without allocation.
#[derive(Clone, Debug)]
pub struct EnergyKernel {
    lattice: Arc<ModeLattice>,
    vhat: Vec<f64>,
    theta: f64,
    wick: f64,
    vol_sqrt: f64,
}

impl EnergyKernel {
    pub fn new(p: &Potential, spec: &InteractionSpec) -> Self {
        let lattice = spec.lattice().clone();
        let vhat = p.on_differences(&lattice);
        let vol_sqrt = two_pi_pow(0.5 * lattice.dim() as f64);
        EnergyKernel { lattice, vhat, theta: spec.theta, wick: spec.wick, vol_sqrt }
    }

    /// Contact interaction: v = 1 on every difference, so D = 1/2 int :|u|^2:^2 - theta int :|u|^2:.
    pub fn local(spec: &InteractionSpec) -> Self {
        let lattice = spec.lattice().clone();
        let vhat = vec![1.0; lattice.pairs().differences.len()];
        let vol_sqrt = two_pi_pow(0.5 * lattice.dim() as f64);
        EnergyKernel { lattice, vhat, theta: spec.theta, wick: spec.wick, vol_sqrt }
    }

    pub fn lattice(&self) -> &Arc<ModeLattice> {
        &self.lattice
    }

    pub fn vhat(&self) -> &[f64] {
        &self.vhat
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn n_differences(&self) -> usize {
        self.vhat.len()
    }

    /// <e_q, |u|^2> for every difference q, without Wick subtraction.
    pub fn density_into(&self, z: &[Complex64], out: &mut [Complex64]) {
        let pairs = self.lattice.pairs();
        let k = z.len();
        out.iter_mut().for_each(|w| *w = Complex64::new(0.0, 0.0));
        for a in 0..k {
            let za = z[a];
            let row = &pairs.pair_diff[a * k..(a + 1) * k];
            for (b, &q) in row.iter().enumerate() {
                out[q as usize] += za * z[b].conj();
            }
        }
        let s = 1.0 / self.vol_sqrt;
        out.iter_mut().for_each(|w| *w *= s);
    }

    pub fn wick_into(&self, z: &[Complex64], out: &mut [Complex64]) {
        self.density_into(z, out);
        out[self.lattice.pairs().zero] -= self.vol_sqrt * self.wick;
    }

    /// D from precomputed W.
    pub fn d_from_wick(&self, w: &[Complex64]) -> f64 {
        let quad: f64 = self.vhat.iter().zip(w).map(|(v, x)| v * x.norm_sqr()).sum();
        0.5 * quad - self.theta * self.vol_sqrt * w[self.lattice.pairs().zero].re
    }

    pub fn energy_d(&self, z: &[Complex64], scratch: &mut [Complex64]) -> f64 {
        self.wick_into(z, scratch);
        self.d_from_wick(scratch)
    }

    pub fn energy_v(&self, z: &[Complex64], scratch: &mut [Complex64]) -> f64 {
        self.density_into(z, scratch);
        self.vhat.iter().zip(scratch.iter()).map(|(v, x)| v * x.norm_sqr()).sum()
    }

    /// dD/d(conj z_k) given W: (2pi)^{-d/2} sum_b v(q) W_q z_b - theta z_k with q = k - b.
    pub fn grad_from_wick(&self, z: &[Complex64], w: &[Complex64], vw: &mut [Complex64], out: &mut [Complex64]) {
        let pairs = self.lattice.pairs();
        let k = z.len();
        for ((o, &v), &x) in vw.iter_mut().zip(&self.vhat).zip(w) {
            *o = x * v;
        }
        let s = 1.0 / self.vol_sqrt;
        for a in 0..k {
            let row = &pairs.pair_diff[a * k..(a + 1) * k];
            let mut acc = Complex64::new(0.0, 0.0);
            for (b, &q) in row.iter().enumerate() {
                acc += vw[q as usize] * z[b];
            }
            out[a] = acc * s - z[a] * self.theta;
        }
    }
}

fn check_lattice(u: &SpectralField, spec: &InteractionSpec) -> Result<()> {
    if u.lattice().same_as(spec.lattice()) {
        Ok(())
    } else {
        Err(Error::LatticeMismatch)
    }
}

/// W_q = <e_q, |u|^2> - delta_{q,0} (2pi)^{d/2} a_P.
pub fn wick_coeffs(u: &SpectralField, spec: &InteractionSpec) -> Result<WickCoeffs> {
    check_lattice(u, spec)?;
    let kernel = EnergyKernel::new(&Potential::off(), spec);
    let mut values = vec![Complex64::new(0.0, 0.0); kernel.n_differences()];
    kernel.wick_into(u.coeffs(), &mut values);
    Ok(WickCoeffs { lattice: spec.lattice().clone(), values })
}

/// D[u] = 1/2 sum_q v^eps(q) |W_q|^2 - theta (2pi)^{d/2} Re W_0.
pub fn energy_d(u: &SpectralField, p: &Potential, spec: &InteractionSpec) -> Result<f64> {
    check_lattice(u, spec)?;
    let kernel = EnergyKernel::new(p, spec);
    let mut w = vec![Complex64::new(0.0, 0.0); kernel.n_differences()];
    Ok(kernel.energy_d(u.coeffs(), &mut w))
}

/// V^eps(u) = sum_q v^eps(q) |<e_q, |u|^2>|^2.
pub fn energy_v(u: &SpectralField, p: &Potential) -> f64 {
    let spec = InteractionSpec::desk(u.lattice().clone(), 0.0);
    let kernel = EnergyKernel::new(p, &spec);
    let mut w = vec![Complex64::new(0.0, 0.0); kernel.n_differences()];
    kernel.energy_v(u.coeffs(), &mut w)
}

/// Gradient of D with respect to the conjugate coefficients.
pub fn grad_d(u: &SpectralField, p: &Potential, spec: &InteractionSpec) -> Result<Vec<Complex64>> {
    check_lattice(u, spec)?;
    let kernel = EnergyKernel::new(p, spec);
    let n = kernel.n_differences();
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut vw = vec![Complex64::new(0.0, 0.0); n];
    let mut out = vec![Complex64::new(0.0, 0.0); u.coeffs().len()];
    kernel.wick_into(u.coeffs(), &mut w);
    kernel.grad_from_wick(u.coeffs(), &w, &mut vw, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal, stream};
    use crate::spectral::CutoffKind;
    use crate::TWO_PI;
    use std::f64::consts::PI;

    fn lattice(d: usize, n: usize) -> Arc<ModeLattice> {
        Arc::new(ModeLattice::build(d, n, CutoffKind::Sharp).unwrap())
    }

    fn random_field(lat: &Arc<ModeLattice>, seed: u64) -> SpectralField {
        let mut rng = stream(seed, 0);
        let var = lat.free_variance();
        let z = var.iter().map(|&v| complex_normal(&mut rng, v)).collect();
        SpectralField::new(lat.clone(), z).unwrap()
    }

    #[test]
    fn zero_field() {
        let lat = lattice(2, 2);
        let spec = InteractionSpec::desk(lat.clone(), 0.0);
        let u = SpectralField::zeros(lat.clone());
        let w = wick_coeffs(&u, &spec).unwrap();
        for (q, x) in w.differences().iter().zip(&w.values) {
            let expect = if *q == Mode::ZERO { -TWO_PI * spec.wick } else { 0.0 };
            assert!((x.re - expect).abs() < 1e-14 && x.im == 0.0);
        }
        let p = Potential::gaussian(1.0, 0.3).unwrap();
        let d = energy_d(&u, &p, &spec).unwrap();
        assert!((d - 0.5 * TWO_PI.powi(2) * spec.wick.powi(2)).abs() < 1e-13);
        assert_eq!(energy_v(&u, &p), 0.0);
    }

    #[test]
    fn zero_field_with_mass_offset_in_one_dim() {
        let lat = lattice(1, 1);
        let spec = InteractionSpec::desk(lat.clone(), 1.0);
        let a_p = spec.wick;
        assert!((a_p - 1.0 / PI).abs() < 1e-15);
        let u = SpectralField::zeros(lat);
        let p = Potential::gaussian(1.0, 1.0).unwrap();
        let d = energy_d(&u, &p, &spec).unwrap();
        // 1/2 (2pi) a_P^2 + theta (2pi) a_P
        assert!((d - (1.0 / PI + 2.0)).abs() < 1e-14);
    }

    #[test]
    fn flat_field_cancels_wick_constant() {
        let lat = lattice(1, 1);
        let spec = InteractionSpec::desk(lat.clone(), 0.3);
        let mut u = SpectralField::zeros(lat.clone());
        let i0 = lat.index_of(Mode::ZERO).unwrap();
        u.coeffs_mut()[i0] = Complex64::from_polar((TWO_PI * spec.wick).sqrt(), 0.7);
        let w = wick_coeffs(&u, &spec).unwrap();
        assert!(w.values.iter().all(|x| x.norm() < 1e-14));
    }

    #[test]
    fn single_mode_v_energy() {
        let lat = lattice(1, 2);
        let mut u = SpectralField::zeros(lat.clone());
        let z = Complex64::new(0.8, -1.1);
        u.coeffs_mut()[lat.index_of(Mode::ZERO).unwrap()] = z;
        let p = Potential::gaussian(1.0, 0.5).unwrap();
        assert!((energy_v(&u, &p) - z.norm_sqr().powi(2) / TWO_PI).abs() < 1e-14);
    }

    #[test]
    fn reality_of_wick_coefficients() {
        let lat = lattice(2, 3);
        let spec = InteractionSpec::desk(lat.clone(), 0.0);
        let u = random_field(&lat, 3);
        let w = wick_coeffs(&u, &spec).unwrap();
        let pairs = lat.pairs();
        for (i, x) in w.values.iter().enumerate() {
            assert!((x - w.values[pairs.negated[i]].conj()).norm() < 1e-13);
        }
    }

    /// Real-space double quadrature of D and V on a uniform grid in d=1.
    fn grid_energies(u: &SpectralField, p: &Potential, spec: &InteractionSpec) -> (f64, f64) {
        let n_cut = u.lattice().cutoff() as i32;
        let n = (4 * n_cut + 2) as usize;
        let h = TWO_PI / n as f64;
        let dens: Vec<f64> = (0..n).map(|j| u.eval(&[j as f64 * h]).norm_sqr()).collect();
        let wick: Vec<f64> = dens.iter().map(|g| g - spec.wick).collect();
        let vgrid: Vec<f64> = (0..n).map(|j| p.real_space(&[j as f64 * h], 2 * n_cut)).collect();
        let mut dd = 0.0;
        let mut vv = 0.0;
        let mut lin = 0.0;
        for i in 0..n {
            lin += wick[i] * h;
            for j in 0..n {
                let v = vgrid[(i + n - j) % n];
                dd += wick[i] * v * wick[j] * h * h;
                vv += dens[i] * v * dens[j] * h * h;
            }
        }
        (0.5 * dd - spec.theta * lin, vv)
    }

    #[test]
    fn spectral_energies_match_grid_quadrature() {
        let lat = lattice(1, 4);
        let spec = InteractionSpec::desk(lat.clone(), 0.37);
        let p = Potential::gaussian(1.0, 0.3).unwrap();
        for seed in 0..5 {
            let u = random_field(&lat, seed);
            let (dg, vg) = grid_energies(&u, &p, &spec);
            let d = energy_d(&u, &p, &spec).unwrap();
            let v = energy_v(&u, &p);
            assert!((d - dg).abs() < 1e-10 * (1.0 + d.abs()), "{d} vs {dg}");
            assert!((v - vg).abs() < 1e-10 * v, "{v} vs {vg}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let lat = lattice(2, 2);
        let spec = InteractionSpec::desk(lat.clone(), 0.4);
        let p = Potential::bessel(3.0, 0.6).unwrap();
        let u = random_field(&lat, 11);
        let g = grad_d(&u, &p, &spec).unwrap();
        let h = 1e-6;
        for i in [0, 3, lat.len() - 1] {
            let mut up = u.clone();
            let mut um = u.clone();
            up.coeffs_mut()[i] += h;
            um.coeffs_mut()[i] -= h;
            let dx = (energy_d(&up, &p, &spec).unwrap() - energy_d(&um, &p, &spec).unwrap()) / (2.0 * h);
            let mut vp = u.clone();
            let mut vm = u.clone();
            vp.coeffs_mut()[i] += Complex64::new(0.0, h);
            vm.coeffs_mut()[i] -= Complex64::new(0.0, h);
            let dy = (energy_d(&vp, &p, &spec).unwrap() - energy_d(&vm, &p, &spec).unwrap()) / (2.0 * h);
            // d/d(conj z) = (d/dx + i d/dy) / 2
            let fd = Complex64::new(0.5 * dx, 0.5 * dy);
            assert!((fd - g[i]).norm() < 1e-6 * (1.0 + g[i].norm()), "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn lattice_mismatch_is_rejected() {
        let spec = InteractionSpec::desk(lattice(1, 2), 0.0);
        let u = SpectralField::zeros(lattice(1, 3));
        assert!(matches!(wick_coeffs(&u, &spec), Err(Error::LatticeMismatch)));
    }
}
