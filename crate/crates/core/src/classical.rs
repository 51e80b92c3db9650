//! Free-field sampling, Markov chains for the interacting measure, moment and
//! log-partition estimators.
//!
//! Only the modes of the lattice are sampled; everything outside P_N is exactly
//! Gaussian and never touches a band-limited observable.

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::persist;
use crate::quad;
use crate::rng::{complex_normal, stream, StreamRng};
use crate::spectral::{EnergyKernel, InteractionSpec, ModeLattice, Potential, SpectralField};
use crate::stats::{self, Estimate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureTag {
    Mu0,
    MuNeps,
    LangevinStationary,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub eps: Option<f64>,
    pub theta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub acceptance_rate: f64,
    /// Integrated autocorrelation time per named observable, in stored samples.
    pub autocorr: Vec<(String, f64)>,
    /// Variance of the normalized importance weights, when weights are present.
    pub weight_variance: Option<f64>,
}

/// Samples on one lattice, optionally importance-weighted.
#[derive(Clone, Debug)]
pub struct SampleEnsemble {
    pub tag: MeasureTag,
    lattice: Arc<ModeLattice>,
    pub params: EnsembleParams,
    /// Row-major, one row of `lattice.len()` coefficients per sample.
    coeffs: Vec<Complex64>,
    log_weights: Vec<f64>,
    pub seed: u64,
    pub diagnostics: ChainDiagnostics,
}

#[derive(Serialize, Deserialize)]
struct EnsembleHeader {
    tag: MeasureTag,
    dim: usize,
    modes: Vec<[i32; 3]>,
    params: EnsembleParams,
    seed: u64,
    diagnostics: ChainDiagnostics,
    samples: usize,
    weighted: bool,
}

impl SampleEnsemble {
    pub(crate) fn from_rows(
        tag: MeasureTag,
        lattice: Arc<ModeLattice>,
        params: EnsembleParams,
        coeffs: Vec<Complex64>,
        seed: u64,
        acceptance_rate: f64,
    ) -> Self {
        let mut ens = SampleEnsemble {
            tag,
            lattice,
            params,
            log_weights: Vec::new(),
            coeffs,
            seed,
            diagnostics: ChainDiagnostics { acceptance_rate, ..Default::default() },
        };
        if ens.len() >= 4 {
            let norms: Vec<f64> = (0..ens.len()).map(|i| norm2(ens.sample(i))).collect();
            ens.diagnostics.autocorr.push(("norm2".into(), stats::autocorr_time(&norms)));
        }
        ens
    }

    pub fn lattice(&self) -> &Arc<ModeLattice> {
        &self.lattice
    }

    pub fn len(&self) -> usize {
        if self.lattice.is_empty() {
            0
        } else {
            self.coeffs.len() / self.lattice.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> &[Complex64] {
        let k = self.lattice.len();
        &self.coeffs[i * k..(i + 1) * k]
    }

    pub fn field(&self, i: usize) -> SpectralField {
        SpectralField::new(self.lattice.clone(), self.sample(i).to_vec()).expect("row length matches lattice")
    }

    /// Empty when unweighted.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Attach importance log-weights (one per sample); the normalized variance is recorded.
    pub fn with_log_weights(mut self, log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != self.len() {
            return Err(invalid("one log-weight per sample is required"));
        }
        if log_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite);
        }
        let w = normalized_weights(&log_weights);
        let n = w.len() as f64;
        // weights normalized to mean 1
        self.diagnostics.weight_variance = Some(w.iter().map(|x| (x * n - 1.0).powi(2)).sum::<f64>() / n);
        self.log_weights = log_weights;
        Ok(self)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let header = EnsembleHeader {
            tag: self.tag,
            dim: self.lattice.dim(),
            modes: self.lattice.modes().iter().map(|k| k.0).collect(),
            params: self.params.clone(),
            seed: self.seed,
            diagnostics: self.diagnostics.clone(),
            samples: self.len(),
            weighted: !self.log_weights.is_empty(),
        };
        let mut payload: Vec<f64> = self.coeffs.iter().flat_map(|z| [z.re, z.im]).collect();
        payload.extend_from_slice(&self.log_weights);
        persist::write_container(stem, &header, &payload)
    }

    /// Reload onto `lattice`, which must carry the stored mode set.
    pub fn load(stem: &Path, lattice: Arc<ModeLattice>) -> Result<Self> {
        let (h, payload): (EnsembleHeader, Vec<f64>) = persist::read_container(stem)?;
        if h.dim != lattice.dim() || h.modes.len() != lattice.len() || h.modes.iter().zip(lattice.modes()).any(|(a, b)| *a != b.0) {
            return Err(Error::LatticeMismatch);
        }
        let nc = 2 * h.samples * lattice.len();
        let nw = if h.weighted { h.samples } else { 0 };
        if payload.len() != nc + nw {
            return Err(invalid("ensemble payload has the wrong length"));
        }
        let coeffs = payload[..nc].chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        Ok(SampleEnsemble {
            tag: h.tag,
            lattice,
            params: h.params,
            coeffs,
            log_weights: payload[nc..].to_vec(),
            seed: h.seed,
            diagnostics: h.diagnostics,
        })
    }
}

fn norm2(z: &[Complex64]) -> f64 {
    z.iter().map(|c| c.norm_sqr()).sum()
}

fn normalized_weights(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn draw_free(rng: &mut StreamRng, var: &[f64], out: &mut [Complex64]) {
    for (o, &v) in out.iter_mut().zip(var) {
        *o = complex_normal(rng, v);
    }
}

/// `n` independent draws of the free field restricted to the lattice.
pub fn sample_gff(lattice: &Arc<ModeLattice>, n: usize, seed: u64) -> Result<SampleEnsemble> {
    if n == 0 {
        return Err(invalid("sample count must be positive"));
    }
    let var = lattice.free_variance();
    let mut rng = stream(seed, 0);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n * lattice.len()];
    for row in coeffs.chunks_exact_mut(lattice.len().max(1)) {
        draw_free(&mut rng, &var, row);
    }
    Ok(SampleEnsemble::from_rows(MeasureTag::Mu0, lattice.clone(), EnsembleParams::default(), coeffs, seed, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Proposals drawn from the free field itself.
    Independence,
    /// Langevin proposal preconditioned by the free covariance, step `h` in (0, 2).
    Mala { step: f64 },
}

/// Lattices up to this many modes default to the independence sampler.
pub const INDEPENDENCE_MAX_MODES: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// `None` picks by lattice size.
    pub sampler: Option<SamplerKind>,
    pub burn_in: usize,
    pub thin: usize,
    pub samples: usize,
    pub acceptance_floor: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { sampler: None, burn_in: 1000, thin: 1, samples: 10_000, acceptance_floor: 0.05 }
    }
}

impl ChainConfig {
    pub fn resolved_sampler(&self, modes: usize) -> SamplerKind {
        self.sampler.unwrap_or(if modes <= INDEPENDENCE_MAX_MODES {
            SamplerKind::Independence
        } else {
            SamplerKind::Mala { step: 0.2 }
        })
    }
}

/// One Markov chain targeting exp(-D) relative to the free field on the lattice.
pub struct Chain {
    kernel: EnergyKernel,
    var: Vec<f64>,
    sampler: SamplerKind,
    rng: StreamRng,
    z: Vec<Complex64>,
    energy: f64,
    grad: Vec<Complex64>,
    prop: Vec<Complex64>,
    prop_grad: Vec<Complex64>,
    w: Vec<Complex64>,
    vw: Vec<Complex64>,
    proposed: u64,
    accepted: u64,
}

impl Chain {
    pub fn new(p: &Potential, spec: &InteractionSpec, sampler: SamplerKind, seed: u64, stream_id: u64) -> Result<Self> {
        if let SamplerKind::Mala { step } = sampler {
            if !(step > 0.0 && step < 2.0) {
                return Err(invalid("MALA step must lie in (0, 2)"));
            }
        }
        let kernel = EnergyKernel::new(p, spec);
        let lat = spec.lattice();
        let k = lat.len();
        let nd = kernel.n_differences();
        let zero = Complex64::new(0.0, 0.0);
        let mut chain = Chain {
            var: lat.free_variance(),
            kernel,
            sampler,
            rng: stream(seed, stream_id),
            z: vec![zero; k],
            energy: 0.0,
            grad: vec![zero; k],
            prop: vec![zero; k],
            prop_grad: vec![zero; k],
            w: vec![zero; nd],
            vw: vec![zero; nd],
            proposed: 0,
            accepted: 0,
        };
        // start from a free-field draw with finite energy
        for _ in 0..1000 {
            draw_free(&mut chain.rng, &chain.var, &mut chain.z);
            chain.energy = chain.kernel.energy_d(&chain.z, &mut chain.w);
            if chain.energy.is_finite() {
                chain.kernel.grad_from_wick(&chain.z, &chain.w, &mut chain.vw, &mut chain.grad);
                return Ok(chain);
            }
        }
        Err(Error::NonFinite)
    }

    pub fn state(&self) -> &[Complex64] {
        &self.z
    }

    /// D at the current state.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn step(&mut self) {
        self.proposed += 1;
        let accept = match self.sampler {
            SamplerKind::Independence => {
                draw_free(&mut self.rng, &self.var, &mut self.prop);
                let e = self.kernel.energy_d(&self.prop, &mut self.w);
                let u: f64 = self.rng.random();
                e.is_finite() && u.ln() < self.energy - e && {
                    self.energy = e;
                    true
                }
            }
            SamplerKind::Mala { step: h } => self.mala_step(h),
        };
        if accept {
            self.accepted += 1;
            std::mem::swap(&mut self.z, &mut self.prop);
            if matches!(self.sampler, SamplerKind::Mala { .. }) {
                std::mem::swap(&mut self.grad, &mut self.prop_grad);
            }
        }
    }

    /// Proposal z' = z - (h/2)(z + C grad D) + sqrt(h) C^{1/2} xi with C the free covariance.
    fn mala_step(&mut self, h: f64) -> bool {
        for i in 0..self.z.len() {
            let c = self.var[i];
            let mean = self.z[i] - 0.5 * h * (self.z[i] + c * self.grad[i]);
            self.prop[i] = mean + complex_normal(&mut self.rng, h * c);
        }
        let e = self.kernel.energy_d(&self.prop, &mut self.w);
        if !e.is_finite() {
            return false;
        }
        self.kernel.grad_from_wick(&self.prop, &self.w, &mut self.vw, &mut self.prop_grad);
        let mut log_a = self.energy - e;
        for i in 0..self.z.len() {
            let c = self.var[i];
            let (z, y) = (self.z[i], self.prop[i]);
            log_a += (z.norm_sqr() - y.norm_sqr()) / c;
            let fwd = y - (z - 0.5 * h * (z + c * self.grad[i]));
            let back = z - (y - 0.5 * h * (y + c * self.prop_grad[i]));
            log_a += (fwd.norm_sqr() - back.norm_sqr()) / (h * c);
        }
        let u: f64 = self.rng.random();
        u.ln() < log_a && {
            self.energy = e;
            true
        }
    }
}

/// Sample the interacting measure with one chain on stream `stream_id`.
pub fn mcmc_mu_neps(p: &Potential, spec: &InteractionSpec, cfg: &ChainConfig, seed: u64) -> Result<SampleEnsemble> {
    run_one(p, spec, cfg, seed, 0)
}

fn run_one(p: &Potential, spec: &InteractionSpec, cfg: &ChainConfig, seed: u64, stream_id: u64) -> Result<SampleEnsemble> {
    if cfg.samples == 0 || cfg.thin == 0 {
        return Err(invalid("samples and thinning must be positive"));
    }
    let lat = spec.lattice().clone();
    let mut chain = Chain::new(p, spec, cfg.resolved_sampler(lat.len()), seed, stream_id)?;
    for _ in 0..cfg.burn_in {
        chain.step();
    }
    let mut coeffs = Vec::with_capacity(cfg.samples * lat.len());
    for _ in 0..cfg.samples {
        for _ in 0..cfg.thin {
            chain.step();
        }
        coeffs.extend_from_slice(chain.state());
    }
    let rate = chain.acceptance_rate();
    if rate < cfg.acceptance_floor {
        return Err(Error::LowAcceptance { rate, floor: cfg.acceptance_floor });
    }
    let params = EnsembleParams { eps: Some(p.eps), theta: spec.theta };
    Ok(SampleEnsemble::from_rows(MeasureTag::MuNeps, lat, params, coeffs, seed, rate))
}

/// Independent chains on streams 0..n_chains, concatenated in stream order.
pub fn mcmc_chains(p: &Potential, spec: &InteractionSpec, cfg: &ChainConfig, seed: u64, n_chains: usize) -> Result<SampleEnsemble> {
    let ids: Vec<u64> = (0..n_chains.max(1) as u64).collect();
    #[cfg(feature = "parallel")]
    let runs: Vec<Result<SampleEnsemble>> = {
        use rayon::prelude::*;
        ids.par_iter().map(|&i| run_one(p, spec, cfg, seed, i)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<Result<SampleEnsemble>> = ids.iter().map(|&i| run_one(p, spec, cfg, seed, i)).collect();
    let mut runs = runs.into_iter().collect::<Result<Vec<_>>>()?.into_iter();
    let mut first = runs.next().expect("at least one chain");
    let mut rate_sum = first.diagnostics.acceptance_rate;
    let mut count = 1.0;
    for r in runs {
        first.coeffs.extend_from_slice(&r.coeffs);
        rate_sum += r.diagnostics.acceptance_rate;
        count += 1.0;
    }
    // autocorrelation over the concatenation is meaningless at the seams; keep the first chain's
    first.diagnostics.acceptance_rate = rate_sum / count;
    Ok(first)
}

/// |<phi, u>|^{2k} averaged over the ensemble.
///
/// Unweighted ensembles get an autocorrelation-corrected error; weighted ones the
/// delta-method error of the self-normalized estimator (samples assumed independent).
pub fn moments(ens: &SampleEnsemble, phi: &SpectralField, k: u32) -> Result<Estimate> {
    if !phi.lattice().same_as(ens.lattice()) {
        return Err(Error::LatticeMismatch);
    }
    if ens.is_empty() {
        return Err(invalid("empty ensemble"));
    }
    let xs: Vec<f64> = (0..ens.len())
        .map(|i| {
            let s: Complex64 = phi.coeffs().iter().zip(ens.sample(i)).map(|(a, b)| a.conj() * b).sum();
            s.norm_sqr().powi(k as i32)
        })
        .collect();
    if ens.log_weights.is_empty() {
        return Ok(stats::estimate(&xs));
    }
    let w = normalized_weights(&ens.log_weights);
    let mean: f64 = w.iter().zip(&xs).map(|(a, b)| a * b).sum();
    let var: f64 = w.iter().zip(&xs).map(|(a, b)| a * a * (b - mean).powi(2)).sum();
    let ess = 1.0 / w.iter().map(|a| a * a).sum::<f64>();
    Ok(Estimate { mean, stderr: var.sqrt(), effective_samples: ess })
}

/// Importance weights exp(-D) on a free-field ensemble.
pub fn reweight(ens: &SampleEnsemble, p: &Potential, spec: &InteractionSpec) -> Result<SampleEnsemble> {
    if !ens.lattice().same_as(spec.lattice()) {
        return Err(Error::LatticeMismatch);
    }
    let kernel = EnergyKernel::new(p, spec);
    let mut w = vec![Complex64::new(0.0, 0.0); kernel.n_differences()];
    let log_w: Vec<f64> = (0..ens.len()).map(|i| -kernel.energy_d(ens.sample(i), &mut w)).collect();
    let mut out = ens.clone();
    out.tag = MeasureTag::MuNeps;
    out.params = EnsembleParams { eps: Some(p.eps), theta: spec.theta };
    out.with_log_weights(log_w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPartition {
    /// log of the free-field average of exp(-D).
    pub estimate: f64,
    pub stderr: f64,
    /// -E_{mu0}[D]; a lower bound by Jensen.
    pub jensen_lower: f64,
}

/// Importance-sampling estimate of log int exp(-D) dmu0 from `n` free-field draws.
pub fn log_partition(p: &Potential, spec: &InteractionSpec, n: usize, seed: u64) -> Result<LogPartition> {
    if n < 2 {
        return Err(invalid("need at least two samples"));
    }
    let lat = spec.lattice();
    let kernel = EnergyKernel::new(p, spec);
    let var = lat.free_variance();
    let mut rng = stream(seed, 0);
    let mut z = vec![Complex64::new(0.0, 0.0); lat.len()];
    let mut w = vec![Complex64::new(0.0, 0.0); kernel.n_differences()];
    let mut energies = Vec::with_capacity(n);
    for _ in 0..n {
        draw_free(&mut rng, &var, &mut z);
        let e = kernel.energy_d(&z, &mut w);
        if !e.is_finite() {
            return Err(Error::NonFinite);
        }
        energies.push(e);
    }
    Ok(log_partition_from_energies(&energies))
}

/// Log-mean-exp of -D with its delta-method error.
pub fn log_partition_from_energies(energies: &[f64]) -> LogPartition {
    let mut lme = stats::LogMeanExp::new();
    energies.iter().for_each(|e| lme.push(-e));
    let estimate = lme.value();
    let n = energies.len() as f64;
    // ratios exp(-D - estimate) have mean one
    let var = energies.iter().map(|e| ((-e - estimate).exp() - 1.0).powi(2)).sum::<f64>() / (n - 1.0);
    let jensen_lower = -energies.iter().sum::<f64>() / n;
    LogPartition { estimate, stderr: (var / n).sqrt(), jensen_lower }
}

/// Exact moments of the interacting measure on a one-mode lattice.
///
/// With x = |z|^2 the free law is exponential with mean c; D is evaluated through the
/// general energy kernel, so this doubles as a check on it.
#[derive(Clone, Debug)]
pub struct OneMode {
    kernel: EnergyKernel,
    mean: f64,
    log_z: f64,
}

impl OneMode {
    pub fn new(p: &Potential, spec: &InteractionSpec) -> Result<Self> {
        let lat = spec.lattice();
        if lat.len() != 1 {
            return Err(invalid("one-mode quadrature needs a lattice with exactly one mode"));
        }
        let kernel = EnergyKernel::new(p, spec);
        let mean = lat.free_variance()[0];
        let mut me = OneMode { kernel, mean, log_z: 0.0 };
        if !me.is_free() {
            me.log_z = me.integral(0)?.ln();
        }
        Ok(me)
    }

    /// No interaction and no offset: the measure is mu0 itself.
    fn is_free(&self) -> bool {
        self.kernel.theta() == 0.0 && self.kernel.vhat().iter().all(|&v| v == 0.0)
    }

    /// D as a function of x = |z|^2.
    pub fn energy(&self, x: f64) -> f64 {
        let mut w = vec![Complex64::new(0.0, 0.0); self.kernel.n_differences()];
        self.kernel.energy_d(&[Complex64::new(x.max(0.0).sqrt(), 0.0)], &mut w)
    }

    fn integral(&self, k: i32) -> Result<f64> {
        let c = self.mean;
        let f = |x: f64| (x.powi(k)) * (-x / c - self.energy(x)).exp() / c;
        // D is quartic, so nothing beyond a few hundred means contributes
        let split = 4.0 * c;
        let a = quad::integrate(f, 0.0, split, 1e-14)?;
        let b = quad::integrate_to_infinity(f, split, 1e-14)?;
        Ok(a.value + b.value)
    }

    /// log int exp(-D) dmu0.
    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    /// E |z|^{2k} under the interacting measure.
    pub fn moment(&self, k: u32) -> Result<f64> {
        if self.is_free() {
            // E x^k for x ~ Exp(mean)
            return Ok((1..=k).fold(1.0, |acc, j| acc * j as f64 * self.mean));
        }
        Ok(self.integral(k as i32)? / self.log_z.exp())
    }

    /// Probability that x = |z|^2 falls in [a, b).
    pub fn probability(&self, a: f64, b: f64) -> Result<f64> {
        let c = self.mean;
        let f = |x: f64| (-x / c - self.energy(x)).exp() / c;
        Ok(quad::integrate(f, a, b, 1e-13)?.value / self.log_z.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{CutoffKind, Mode};

    fn lattice(d: usize, n: usize) -> Arc<ModeLattice> {
        Arc::new(ModeLattice::build(d, n, CutoffKind::Sharp).unwrap())
    }

    fn single() -> Arc<ModeLattice> {
        Arc::new(ModeLattice::from_modes(1, vec![Mode::ZERO]).unwrap())
    }

    fn basis_vector(lat: &Arc<ModeLattice>, i: usize) -> SpectralField {
        let mut f = SpectralField::zeros(lat.clone());
        f.coeffs_mut()[i] = Complex64::new(1.0, 0.0);
        f
    }

    #[test]
    fn gff_second_and_fourth_moments() {
        let lat = lattice(1, 2);
        let ens = sample_gff(&lat, 100_000, 3).unwrap();
        for (i, k) in lat.modes().iter().enumerate() {
            let b = k.bracket2();
            let phi = basis_vector(&lat, i);
            let m1 = moments(&ens, &phi, 1).unwrap();
            assert!((m1.mean - 1.0 / b).abs() < 4.0 * m1.stderr, "{k:?} {m1:?}");
            let m2 = moments(&ens, &phi, 2).unwrap();
            // complex Gaussian: E|z|^4 = 2 (E|z|^2)^2
            assert!((m2.mean - 2.0 / (b * b)).abs() < 4.0 * m2.stderr, "{k:?} {m2:?}");
        }
    }

    #[test]
    fn gff_pseudo_covariance_vanishes() {
        let lat = lattice(1, 1);
        let n = 50_000;
        let ens = sample_gff(&lat, n, 5).unwrap();
        let (a, b) = (lat.index_of(Mode::new(&[1])).unwrap(), lat.index_of(Mode::new(&[0])).unwrap());
        let mut s = Complex64::new(0.0, 0.0);
        let mut s2 = 0.0;
        for i in 0..n {
            let x = ens.sample(i)[a] * ens.sample(i)[b];
            s += x;
            s2 += x.norm_sqr();
        }
        let se = (s2 / n as f64).sqrt() / (n as f64).sqrt();
        assert!((s / n as f64).norm() < 4.0 * se);
        // E z_k^2 = 0 too
        let sq: Complex64 = (0..n).map(|i| ens.sample(i)[a].powi(2)).sum::<Complex64>() / n as f64;
        let m4: f64 = (0..n).map(|i| ens.sample(i)[a].norm_sqr().powi(2)).sum::<f64>() / n as f64;
        assert!(sq.norm() < 4.0 * (m4 / n as f64).sqrt());
    }

    #[test]
    fn smooth_cutoff_scales_variance() {
        let lat = Arc::new(ModeLattice::build(1, 3, CutoffKind::Smooth).unwrap());
        let ens = sample_gff(&lat, 40_000, 8).unwrap();
        let i = lat.index_of(Mode::new(&[3])).unwrap();
        let chi = lat.chi()[i];
        assert!(chi < 1.0 && chi > 0.0);
        let m = moments(&ens, &basis_vector(&lat, i), 1).unwrap();
        assert!((m.mean - chi * chi / 10.0).abs() < 4.0 * m.stderr);
    }

    #[test]
    fn zero_interaction_reproduces_free_field() {
        let lat = lattice(1, 2);
        let spec = InteractionSpec::desk(lat.clone(), 0.0);
        let cfg = ChainConfig { samples: 40_000, burn_in: 10, ..Default::default() };
        let ens = mcmc_mu_neps(&Potential::off(), &spec, &cfg, 11).unwrap();
        assert_eq!(ens.diagnostics.acceptance_rate, 1.0);
        let free = sample_gff(&lat, 40_000, 12).unwrap();
        for i in 0..lat.len() {
            let phi = basis_vector(&lat, i);
            let (a, b) = (moments(&ens, &phi, 1).unwrap(), moments(&free, &phi, 1).unwrap());
            assert!(a.sigma_gap(&b) < 4.0);
        }
    }

    fn one_mode_setup() -> (Potential, InteractionSpec) {
        (Potential::gaussian(1.0, 0.1).unwrap(), InteractionSpec::desk(single(), 0.3))
    }

    /// D(x) = v(0)/(2 (2pi)^d) (x - 1)^2 - theta (x - 1) written out by hand.
    fn one_mode_energy(theta: f64, x: f64) -> f64 {
        (x - 1.0).powi(2) / (2.0 * std::f64::consts::TAU) - theta * (x - 1.0)
    }

    #[test]
    fn one_mode_quadrature_matches_closed_form() {
        let (p, spec) = one_mode_setup();
        let om = OneMode::new(&p, &spec).unwrap();
        for x in [0.0, 0.5, 3.0, 17.0] {
            assert!((om.energy(x) - one_mode_energy(0.3, x)).abs() < 1e-13);
        }
        // crude midpoint oracle on a fine grid
        let h = 1e-4;
        let (mut z, mut m1) = (0.0, 0.0);
        for i in 0..600_000 {
            let x = (i as f64 + 0.5) * h;
            let w = (-x - one_mode_energy(0.3, x)).exp() * h;
            z += w;
            m1 += x * w;
        }
        assert!((om.log_partition() - z.ln()).abs() < 1e-8);
        assert!((om.moment(1).unwrap() - m1 / z).abs() < 1e-8);
    }

    #[test]
    fn one_mode_chain_matches_quadrature() {
        let (p, spec) = one_mode_setup();
        let om = OneMode::new(&p, &spec).unwrap();
        let phi = basis_vector(spec.lattice(), 0);
        for sampler in [SamplerKind::Independence, SamplerKind::Mala { step: 0.5 }] {
            let cfg = ChainConfig { sampler: Some(sampler), samples: 100_000, burn_in: 1000, ..Default::default() };
            let ens = mcmc_mu_neps(&p, &spec, &cfg, 21).unwrap();
            for k in 1..=2 {
                let m = moments(&ens, &phi, k).unwrap();
                let exact = om.moment(k).unwrap();
                assert!((m.mean - exact).abs() < 3.0 * m.stderr, "{sampler:?} k={k}: {m:?} vs {exact}");
            }
        }
    }

    #[test]
    fn independence_marginal_total_variation() {
        let (p, spec) = one_mode_setup();
        let om = OneMode::new(&p, &spec).unwrap();
        let cfg = ChainConfig { sampler: Some(SamplerKind::Independence), samples: 1_000_000, burn_in: 100, ..Default::default() };
        let ens = mcmc_mu_neps(&p, &spec, &cfg, 2).unwrap();
        let edges: Vec<f64> = (0..=20).map(|i| i as f64 * 0.4).chain([f64::INFINITY]).collect();
        let mut counts = vec![0usize; edges.len() - 1];
        for i in 0..ens.len() {
            let x = ens.sample(i)[0].norm_sqr();
            let b = edges.partition_point(|&e| e <= x) - 1;
            counts[b] += 1;
        }
        let mut tv = 0.0;
        for b in 0..counts.len() {
            let hi = if edges[b + 1].is_finite() { edges[b + 1] } else { 1e3 };
            let exact = om.probability(edges[b], hi).unwrap();
            tv += (counts[b] as f64 / ens.len() as f64 - exact).abs();
        }
        assert!(0.5 * tv < 0.02, "tv {}", 0.5 * tv);
    }

    #[test]
    fn same_seed_same_chain() {
        let lat = lattice(1, 2);
        let spec = InteractionSpec::desk(lat.clone(), 0.1);
        let p = Potential::gaussian(1.0, 0.2).unwrap();
        for sampler in [SamplerKind::Independence, SamplerKind::Mala { step: 0.3 }] {
            let cfg = ChainConfig { sampler: Some(sampler), samples: 500, burn_in: 10, ..Default::default() };
            let a = mcmc_mu_neps(&p, &spec, &cfg, 9).unwrap();
            let b = mcmc_mu_neps(&p, &spec, &cfg, 9).unwrap();
            assert!(a.coeffs.iter().zip(&b.coeffs).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
        }
    }

    #[test]
    fn low_acceptance_is_reported() {
        let lat = lattice(1, 4);
        let spec = InteractionSpec::desk(lat, 40.0);
        let p = Potential::gaussian(1.0, 0.1).unwrap();
        let cfg = ChainConfig { sampler: Some(SamplerKind::Independence), samples: 2000, acceptance_floor: 0.2, ..Default::default() };
        assert!(matches!(mcmc_mu_neps(&p, &spec, &cfg, 1), Err(Error::LowAcceptance { .. })));
    }

    #[test]
    fn reweighting_matches_chain() {
        let lat = lattice(1, 1);
        let spec = InteractionSpec::desk(lat.clone(), 0.2);
        let p = Potential::gaussian(1.0, 0.3).unwrap();
        let free = sample_gff(&lat, 200_000, 31).unwrap();
        let rw = reweight(&free, &p, &spec).unwrap();
        assert!(rw.diagnostics.weight_variance.unwrap().is_finite());
        let cfg = ChainConfig { samples: 200_000, ..Default::default() };
        let chain = mcmc_mu_neps(&p, &spec, &cfg, 32).unwrap();
        for i in 0..lat.len() {
            let phi = basis_vector(&lat, i);
            let (a, b) = (moments(&rw, &phi, 1).unwrap(), moments(&chain, &phi, 1).unwrap());
            assert!(a.sigma_gap(&b) < 4.0, "{a:?} {b:?}");
        }
    }

    #[test]
    fn log_partition_cases() {
        let lat = lattice(1, 2);
        let zero = log_partition(&Potential::off(), &InteractionSpec::desk(lat.clone(), 0.0), 100, 1).unwrap();
        assert_eq!(zero.estimate, 0.0);
        assert_eq!(zero.stderr, 0.0);
        let c = log_partition_from_energies(&[2.5; 50]);
        assert!((c.estimate + 2.5).abs() < 1e-15 && c.stderr == 0.0);
        let (p, spec) = one_mode_setup();
        let est = log_partition(&p, &spec, 200_000, 4).unwrap();
        let exact = OneMode::new(&p, &spec).unwrap().log_partition();
        assert!((est.estimate - exact).abs() < 3.0 * est.stderr, "{est:?} {exact}");
        assert!(est.jensen_lower <= est.estimate + 3.0 * est.stderr);
    }

    #[test]
    fn checkpoint_round_trip() {
        let lat = lattice(1, 1);
        let spec = InteractionSpec::desk(lat.clone(), 0.2);
        let p = Potential::gaussian(1.0, 0.3).unwrap();
        let ens = reweight(&sample_gff(&lat, 100, 1).unwrap(), &p, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ens");
        ens.save(&stem).unwrap();
        let back = SampleEnsemble::load(&stem, lat.clone()).unwrap();
        assert_eq!(back.coeffs, ens.coeffs);
        assert_eq!(back.log_weights, ens.log_weights);
        assert_eq!(back.diagnostics, ens.diagnostics);
        assert!(SampleEnsemble::load(&stem, lattice(1, 2)).is_err());
    }

    #[test]
    fn rejects_empty_requests() {
        assert!(sample_gff(&lattice(1, 1), 0, 1).is_err());
        let spec = InteractionSpec::desk(lattice(1, 1), 0.0);
        let cfg = ChainConfig { sampler: Some(SamplerKind::Mala { step: 3.0 }), ..Default::default() };
        assert!(mcmc_mu_neps(&Potential::off(), &spec, &cfg, 1).is_err());
    }
}
