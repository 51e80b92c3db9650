//! Galerkin Langevin dynamics on a mode lattice: the free OU field, the Hartree
//! drift and the local cubic drift.
//!
//! Integrator: exponential Euler. The linear part -<k>^2 z is solved exactly, the
//! nonlinear drift is frozen over a step, and the noise has the exact OU variance.
//! Nonlinear products are convolved directly in mode space, which is the exact
//! Galerkin projection (no aliasing to remove).

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::classical::{EnsembleParams, MeasureTag, SampleEnsemble};
use crate::counterterms;
use crate::error::{invalid, Error, Result};
use crate::persist;
use crate::rng::{complex_normal, stream, StreamRng};
use crate::spectral::{CutoffKind, EnergyKernel, InteractionSpec, Mode, ModeLattice, Potential};
use crate::stats::{BatchMeans, Estimate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Linear,
    Hartree,
    LocalPhi4,
}

impl std::str::FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Model::Linear),
            "hartree" => Ok(Model::Hartree),
            "local-phi4" | "local" => Ok(Model::LocalPhi4),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

/// Field coefficients, time and the noise stream.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LangevinState {
    #[serde(skip)]
    pub z: Vec<Complex64>,
    pub steps: u64,
    pub t: f64,
    pub rng: StreamRng,
}

impl LangevinState {
    pub fn new(z: Vec<Complex64>, seed: u64) -> Self {
        LangevinState { z, steps: 0, t: 0.0, rng: stream(seed, 0) }
    }

    /// A free-field draw on `lattice` from the state's own stream.
    pub fn from_free_field(lattice: &ModeLattice, seed: u64) -> Self {
        let mut rng = stream(seed, 0);
        let z = lattice.free_variance().iter().map(|&v| complex_normal(&mut rng, v)).collect();
        LangevinState { z, steps: 0, t: 0.0, rng }
    }
}

/// One exact OU step of length `dt` (any dt >= 0, including infinity) for every mode.
///
/// z <- e^{-<k>^2 dt} z + eta, E|eta|^2 = c_k (1 - e^{-2<k>^2 dt}) with c_k the free variance.
pub fn ou_exact_step(lattice: &ModeLattice, state: &mut LangevinState, dt: f64) {
    let var = lattice.free_variance();
    for ((z, &mu), &c) in state.z.iter_mut().zip(lattice.bracket2()).zip(&var) {
        let decay = (-mu * dt).exp();
        let noise = complex_normal(&mut state.rng, c * (1.0 - decay * decay).max(0.0));
        *z = *z * decay + noise;
    }
    state.t += dt;
    state.steps += 1;
}

/// Exponential Euler stepper with precomputed per-mode factors.
#[derive(Clone, Debug)]
pub struct Integrator {
    model: Model,
    lattice: Arc<ModeLattice>,
    kernel: Option<EnergyKernel>,
    dt: f64,
    noise: bool,
    decay: Vec<f64>,
    gain: Vec<f64>,
    noise_var: Vec<f64>,
    chi2: Vec<f64>,
    w: Vec<Complex64>,
    vw: Vec<Complex64>,
    grad: Vec<Complex64>,
}

impl Integrator {
    fn build(model: Model, lattice: Arc<ModeLattice>, kernel: Option<EnergyKernel>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("time step must be positive and finite"));
        }
        let var = lattice.free_variance();
        let mut decay = Vec::new();
        let mut gain = Vec::new();
        let mut noise_var = Vec::new();
        for (&mu, &c) in lattice.bracket2().iter().zip(&var) {
            let e = (-mu * dt).exp();
            decay.push(e);
            gain.push(-(-mu * dt).exp_m1() / mu);
            noise_var.push(c * (1.0 - e * e));
        }
        let chi2 = lattice.chi().iter().map(|c| c * c).collect();
        let nd = kernel.as_ref().map_or(0, |k| k.n_differences());
        let k = lattice.len();
        let zero = Complex64::new(0.0, 0.0);
        Ok(Integrator {
            model,
            lattice,
            kernel,
            dt,
            noise: true,
            decay,
            gain,
            noise_var,
            chi2,
            w: vec![zero; nd],
            vw: vec![zero; nd],
            grad: vec![zero; k],
        })
    }

    pub fn linear(lattice: Arc<ModeLattice>, dt: f64) -> Result<Self> {
        Self::build(Model::Linear, lattice, None, dt)
    }

    /// Drift -Pi_N[(v * :|Psi|^2:) Psi] + theta Psi with theta and a_P taken from `spec`.
    pub fn hartree(p: &Potential, spec: &InteractionSpec, dt: f64) -> Result<Self> {
        Self::build(Model::Hartree, spec.lattice().clone(), Some(EnergyKernel::new(p, spec)), dt)
    }

    /// Drift -Pi_N[(|Phi|^2 - 2 a_P) Phi] - mass Phi.
    pub fn local_phi4(lattice: Arc<ModeLattice>, mass: f64, dt: f64) -> Result<Self> {
        let wick = lattice.wick_constant();
        let spec = InteractionSpec::desk(lattice.clone(), wick - mass);
        Self::build(Model::LocalPhi4, lattice, Some(EnergyKernel::local(&spec)), dt)
    }

    /// Deterministic runs: drop the noise term.
    pub fn without_noise(mut self) -> Self {
        self.noise = false;
        self
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn lattice(&self) -> &Arc<ModeLattice> {
        &self.lattice
    }

    pub fn kernel(&self) -> Option<&EnergyKernel> {
        self.kernel.as_ref()
    }

    /// Nonlinear drift F(z) = -chi^2 dD/d(conj z); zero for the linear model.
    pub fn drift(&mut self, z: &[Complex64], out: &mut [Complex64]) {
        match &self.kernel {
            None => out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0)),
            Some(kernel) => {
                kernel.wick_into(z, &mut self.w);
                kernel.grad_from_wick(z, &self.w, &mut self.vw, out);
                for (o, &c) in out.iter_mut().zip(&self.chi2) {
                    *o = -*o * c;
                }
            }
        }
    }

    pub fn step(&mut self, state: &mut LangevinState) -> Result<()> {
        let mut grad = std::mem::take(&mut self.grad);
        self.drift(&state.z, &mut grad);
        let mut finite = true;
        for i in 0..state.z.len() {
            let mut z = state.z[i] * self.decay[i] + grad[i] * self.gain[i];
            if self.noise {
                z += complex_normal(&mut state.rng, self.noise_var[i]);
            }
            finite &= z.re.is_finite() && z.im.is_finite();
            state.z[i] = z;
        }
        self.grad = grad;
        state.steps += 1;
        state.t = state.steps as f64 * self.dt;
        if finite {
            Ok(())
        } else {
            Err(Error::BlowUp { time: state.t })
        }
    }

    /// Largest step the frozen drift tolerates, from finite-difference Lipschitz probes
    /// at free-field draws inflated by 1.5 in amplitude. Heuristic: returns 1 / max L.
    pub fn stability_bound(&mut self, seed: u64) -> f64 {
        if self.kernel.is_none() {
            return f64::INFINITY;
        }
        let lat = self.lattice.clone();
        let var = lat.free_variance();
        let mut rng = stream(seed, 7);
        let k = lat.len();
        let mut f0 = vec![Complex64::new(0.0, 0.0); k];
        let mut f1 = f0.clone();
        let mut lip: f64 = 0.0;
        for _ in 0..20 {
            let z: Vec<Complex64> = var.iter().map(|&v| complex_normal(&mut rng, 2.25 * v)).collect();
            let dz: Vec<Complex64> = var.iter().map(|&v| complex_normal(&mut rng, 1e-12 * v)).collect();
            let z1: Vec<Complex64> = z.iter().zip(&dz).map(|(a, b)| a + b).collect();
            self.drift(&z, &mut f0);
            self.drift(&z1, &mut f1);
            let num: f64 = f0.iter().zip(&f1).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let den: f64 = dz.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            lip = lip.max(num / den);
        }
        1.0 / lip.max(1e-300)
    }
}

/// theta for the Hartree drift from the cutoff constants: a^{eps,N} - 6 b^{eps,N} + 1 - m.
pub fn hartree_theta(p: &Potential, lattice: &ModeLattice, m: f64) -> Result<f64> {
    Ok(counterterms::a_eps_n(p, lattice) - counterterms::six_b_eps_n(p, lattice)? + 1.0 - m)
}

/// Mass coefficient of the local drift consistent with the eps -> 0 limit of the Hartree
/// drift at this cutoff: 6 b^{0,N} - 1 + m.
pub fn local_mass(lattice: &ModeLattice, m: f64) -> Result<f64> {
    let contact = Potential::gaussian(1.0, 1e-9)?;
    Ok(counterterms::six_b_eps_n(&contact, lattice)? - 1.0 + m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LangevinConfig {
    pub model: Model,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub eps: f64,
    /// Gaussian width of the interaction profile.
    pub c: f64,
    /// Renormalized mass m.
    pub m: f64,
    /// Overrides the composed theta of the Hartree model.
    pub theta: Option<f64>,
    /// Overrides the composed mass of the local model.
    pub local_mass: Option<f64>,
    pub dt: f64,
    pub t_total: f64,
    pub burn_in: f64,
    pub record_stride: f64,
    pub seed: u64,
    /// Batch length for stationary error bars, in time units.
    pub batch_time: f64,
    /// Stationary samples kept in the output ensemble.
    pub max_ensemble: usize,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        LangevinConfig {
            model: Model::Hartree,
            d: 1,
            n: 4,
            eps: 0.1,
            c: 1.0,
            m: 1.0,
            theta: None,
            local_mass: None,
            dt: 0.05,
            t_total: 100.0,
            burn_in: 10.0,
            record_stride: 1.0,
            seed: 1,
            batch_time: 20.0,
            max_ensemble: 10_000,
        }
    }
}

impl LangevinConfig {
    fn steps(&self, t: f64) -> u64 {
        (t / self.dt).round() as u64
    }

    pub fn record_count(&self) -> u64 {
        let (total, burn, stride) = (self.steps(self.t_total), self.steps(self.burn_in), self.steps(self.record_stride).max(1));
        if total < burn {
            0
        } else {
            (total - burn) / stride + 1
        }
    }

    pub fn lattice(&self) -> Result<Arc<ModeLattice>> {
        Ok(Arc::new(ModeLattice::build(self.d, self.n, CutoffKind::Sharp)?))
    }

    pub fn integrator(&self, lattice: &Arc<ModeLattice>) -> Result<Integrator> {
        match self.model {
            Model::Linear => Integrator::linear(lattice.clone(), self.dt),
            Model::Hartree => {
                let p = Potential::gaussian(self.c, self.eps)?;
                let theta = match self.theta {
                    Some(t) => t,
                    None => hartree_theta(&p, lattice, self.m)?,
                };
                Integrator::hartree(&p, &InteractionSpec::desk(lattice.clone(), theta), self.dt)
            }
            Model::LocalPhi4 => {
                let mass = match self.local_mass {
                    Some(m) => m,
                    None => local_mass(lattice, self.m)?,
                };
                Integrator::local_phi4(lattice.clone(), mass, self.dt)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub norm2: f64,
    /// V^eps of the current field; zero for the local and linear models.
    pub potential_energy: f64,
    /// |<e_0, Psi>|^2.
    pub m1: f64,
    /// |<e_0, Psi>|^4.
    pub m2: f64,
}

/// Stationary averages accumulated at every step after burn-in.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stationary {
    pub m1: BatchMeans,
    pub m2: BatchMeans,
    pub norm2: BatchMeans,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub m1: Estimate,
    pub m2: Estimate,
    pub norm2: Estimate,
    pub potential_energy: Estimate,
    /// Wick convention of the local cubic term, recorded for the output metadata.
    pub wick_convention: String,
    pub stability_bound: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    cfg: LangevinConfig,
    state: LangevinState,
    stationary: Stationary,
    records: Vec<Record>,
    ensemble_rows: usize,
}

/// A resumable run of one trajectory.
pub struct Simulation {
    cfg: LangevinConfig,
    lattice: Arc<ModeLattice>,
    integrator: Integrator,
    state: LangevinState,
    probe: usize,
    stationary: Stationary,
    records: Vec<Record>,
    ensemble: Vec<Complex64>,
    potential: Option<EnergyKernel>,
    scratch: Vec<Complex64>,
    stability_bound: f64,
}

impl Simulation {
    pub fn new(cfg: LangevinConfig) -> Result<Self> {
        let lattice = cfg.lattice()?;
        let state = LangevinState::from_free_field(&lattice, cfg.seed);
        Self::with_state(cfg, lattice, state)
    }

    pub fn with_state(cfg: LangevinConfig, lattice: Arc<ModeLattice>, state: LangevinState) -> Result<Self> {
        if !(cfg.t_total >= cfg.burn_in && cfg.burn_in >= 0.0 && cfg.record_stride > 0.0) {
            return Err(invalid("need 0 <= burn_in <= t_total and a positive record stride"));
        }
        if state.z.len() != lattice.len() {
            return Err(Error::LatticeMismatch);
        }
        let mut integrator = cfg.integrator(&lattice)?;
        let stability_bound = integrator.stability_bound(cfg.seed);
        if cfg.dt > stability_bound {
            return Err(invalid(format!("dt = {} exceeds the probed stability bound {stability_bound:.3}", cfg.dt)));
        }
        let batch = ((cfg.batch_time / cfg.dt).round() as u64).max(1);
        let probe = lattice.index_of(Mode::ZERO).ok_or(Error::ModeNotInBasis(Mode::ZERO))?;
        let potential = match cfg.model {
            Model::Hartree => integrator.kernel().cloned(),
            _ => None,
        };
        let nd = lattice.pairs().differences.len();
        Ok(Simulation {
            stationary: Stationary { m1: BatchMeans::new(batch), m2: BatchMeans::new(batch), norm2: BatchMeans::new(batch) },
            records: Vec::new(),
            ensemble: Vec::new(),
            scratch: vec![Complex64::new(0.0, 0.0); nd],
            cfg,
            lattice,
            integrator,
            state,
            probe,
            potential,
            stability_bound,
        })
    }

    pub fn state(&self) -> &LangevinState {
        &self.state
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    fn total_steps(&self) -> u64 {
        self.cfg.steps(self.cfg.t_total)
    }

    fn observe(&mut self) {
        let burn = self.cfg.steps(self.cfg.burn_in);
        let s = self.state.steps;
        if s < burn {
            return;
        }
        let x = self.state.z[self.probe].norm_sqr();
        let norm2: f64 = self.state.z.iter().map(|c| c.norm_sqr()).sum();
        self.stationary.m1.push(x);
        self.stationary.m2.push(x * x);
        self.stationary.norm2.push(norm2);
        let stride = self.cfg.steps(self.cfg.record_stride).max(1);
        if (s - burn) % stride == 0 {
            let potential_energy = match &self.potential {
                Some(k) => k.energy_v(&self.state.z, &mut self.scratch),
                None => 0.0,
            };
            self.records.push(Record { t: self.state.t, norm2, potential_energy, m1: x, m2: x * x });
            if self.ensemble.len() < self.cfg.max_ensemble * self.lattice.len() {
                self.ensemble.extend_from_slice(&self.state.z);
            }
        }
    }

    /// Advance by at most `max_steps`; returns true once the run is complete.
    pub fn advance(&mut self, max_steps: u64) -> Result<bool> {
        if self.state.steps == 0 && self.records.is_empty() && self.stationary.m1.count() == 0 {
            self.observe();
        }
        let end = self.total_steps().min(self.state.steps.saturating_add(max_steps));
        while self.state.steps < end {
            self.integrator.step(&mut self.state)?;
            self.observe();
        }
        Ok(self.state.steps >= self.total_steps())
    }

    pub fn run(&mut self) -> Result<()> {
        self.advance(u64::MAX).map(|_| ())
    }

    pub fn checkpoint(&self, stem: &Path) -> Result<()> {
        let header = CheckpointHeader {
            cfg: self.cfg.clone(),
            state: self.state.clone(),
            stationary: self.stationary.clone(),
            records: self.records.clone(),
            ensemble_rows: self.ensemble.len() / self.lattice.len(),
        };
        let payload: Vec<f64> = self.state.z.iter().chain(&self.ensemble).flat_map(|z| [z.re, z.im]).collect();
        persist::write_container(stem, &header, &payload)
    }

    pub fn resume(stem: &Path) -> Result<Self> {
        let (h, payload): (CheckpointHeader, Vec<f64>) = persist::read_container(stem)?;
        let lattice = h.cfg.lattice()?;
        let k = lattice.len();
        if payload.len() != 2 * k * (1 + h.ensemble_rows) {
            return Err(invalid("checkpoint payload does not match its lattice"));
        }
        let mut coeffs = payload.chunks_exact(2).map(|c| Complex64::new(c[0], c[1]));
        let mut state = h.state;
        state.z = coeffs.by_ref().take(k).collect();
        let mut sim = Self::with_state(h.cfg, lattice, state)?;
        sim.stationary = h.stationary;
        sim.records = h.records;
        sim.ensemble = coeffs.collect();
        Ok(sim)
    }

    pub fn summary(&self) -> Summary {
        let pe: Vec<f64> = self.records.iter().map(|r| r.potential_energy).collect();
        let potential_energy = if pe.len() >= 2 {
            crate::stats::estimate(&pe)
        } else {
            Estimate { mean: pe.first().copied().unwrap_or(0.0), stderr: f64::INFINITY, effective_samples: 0.0 }
        };
        Summary {
            m1: self.stationary.m1.estimate(),
            m2: self.stationary.m2.estimate(),
            norm2: self.stationary.norm2.estimate(),
            potential_energy,
            wick_convention: "(|Phi|^2 - 2 a_P) Phi".into(),
            stability_bound: self.stability_bound,
        }
    }

    /// Recorded stationary states as an ensemble on the run's lattice.
    pub fn ensemble(&self) -> SampleEnsemble {
        let params = EnsembleParams { eps: Some(self.cfg.eps), theta: self.integrator.kernel().map_or(0.0, |k| k.theta()) };
        SampleEnsemble::from_rows(MeasureTag::LangevinStationary, self.lattice.clone(), params, self.ensemble.clone(), self.cfg.seed, 1.0)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run a configuration to completion.
pub fn simulate(cfg: &LangevinConfig) -> Result<Simulation> {
    let mut sim = Simulation::new(cfg.clone())?;
    sim.run()?;
    Ok(sim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(n: usize) -> Arc<ModeLattice> {
        Arc::new(ModeLattice::build(1, n, CutoffKind::Sharp).unwrap())
    }

    #[test]
    fn ou_limits() {
        let lat = lattice(2);
        let z0: Vec<Complex64> = (0..lat.len()).map(|i| Complex64::new(i as f64, -1.0)).collect();
        let mut s = LangevinState::new(z0.clone(), 4);
        ou_exact_step(&lat, &mut s, 0.0);
        assert_eq!(s.z, z0);
        // infinite step forgets the start: second moments of mode 0 over many restarts
        let n = 40_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for i in 0..n {
            let mut s = LangevinState::new(z0.clone(), i);
            ou_exact_step(&lat, &mut s, f64::INFINITY);
            let x = s.z[lat.index_of(Mode::new(&[1])).unwrap()].norm_sqr();
            acc += x;
            acc2 += x * x;
        }
        let mean = acc / n as f64;
        let se = ((acc2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 4.0 * se);
    }

    #[test]
    fn ou_one_step_law() {
        // mean and variance of the transition, against the Gaussian formula
        let lat = lattice(1);
        let i = lat.index_of(Mode::new(&[1])).unwrap();
        let dt = 0.3;
        let z0 = vec![Complex64::new(0.7, 0.2); lat.len()];
        let n = 100_000;
        let (mut m, mut v) = (Complex64::new(0.0, 0.0), 0.0);
        for s in 0..n {
            let mut st = LangevinState::new(z0.clone(), s);
            ou_exact_step(&lat, &mut st, dt);
            m += st.z[i];
            v += (st.z[i] - z0[i] * (-2.0 * dt).exp()).norm_sqr();
        }
        let mean_exact = z0[i] * (-2.0 * dt).exp();
        let var_exact = (1.0 - (-4.0 * dt).exp()) / 2.0;
        assert!(((m / n as f64) - mean_exact).norm() < 4.0 * (var_exact / n as f64).sqrt());
        assert!((v / n as f64 - var_exact).abs() < 4.0 * var_exact * (1.0 / n as f64).sqrt());
        // the integrator's linear factors are the exact ones
        let integ = Integrator::linear(lat.clone(), dt).unwrap();
        assert!((integ.decay[i] - (-2.0 * dt).exp()).abs() < 1e-15);
        assert!((integ.noise_var[i] - var_exact).abs() < 1e-15);
    }

    #[test]
    fn two_time_correlation() {
        let lat = lattice(1);
        let i = lat.index_of(Mode::new(&[1])).unwrap();
        let mut integ = Integrator::linear(lat.clone(), 0.05).unwrap();
        let mut s = LangevinState::from_free_field(&lat, 3);
        let lag = 10; // 0.5 time units
        let mut hist: Vec<Complex64> = Vec::new();
        for _ in 0..400_000 {
            integ.step(&mut s).unwrap();
            hist.push(s.z[i]);
        }
        let xs: Vec<f64> = hist.windows(lag + 1).map(|w| (w[lag] * w[0].conj()).re).collect();
        let est = crate::stats::estimate(&xs);
        let exact = (-2.0f64 * 0.5).exp() / 2.0;
        assert!((est.mean - exact).abs() < 4.0 * est.stderr, "{est:?} vs {exact}");
    }

    #[test]
    fn zero_coupling_is_linear() {
        let lat = lattice(2);
        let spec = InteractionSpec::desk(lat.clone(), 0.0);
        let mut a = Integrator::hartree(&Potential::off(), &spec, 0.1).unwrap();
        let mut b = Integrator::linear(lat.clone(), 0.1).unwrap();
        let mut sa = LangevinState::from_free_field(&lat, 5);
        let mut sb = sa.clone();
        for _ in 0..100 {
            a.step(&mut sa).unwrap();
            b.step(&mut sb).unwrap();
        }
        assert_eq!(sa.z, sb.z);
    }

    #[test]
    fn local_drift_by_hand() {
        // mass 0 and a_P subtraction: drift equals -Pi_N[(|Phi|^2 - 2 a_P) Phi] computed on a grid
        let lat = lattice(2);
        let mut integ = Integrator::local_phi4(lat.clone(), 0.0, 0.1).unwrap();
        let s = LangevinState::from_free_field(&lat, 9);
        let mut out = vec![Complex64::new(0.0, 0.0); lat.len()];
        integ.drift(&s.z, &mut out);
        let a_p = lat.wick_constant();
        let tau = std::f64::consts::TAU;
        let ng = 64;
        let field = |x: f64| -> Complex64 {
            lat.modes().iter().zip(&s.z).map(|(k, z)| z * Complex64::from_polar(1.0, k.0[0] as f64 * x)).sum::<Complex64>() / tau.sqrt()
        };
        for (i, k) in lat.modes().iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..ng {
                let x = tau * j as f64 / ng as f64;
                let f = field(x);
                let g = (f.norm_sqr() - 2.0 * a_p) * f;
                acc += g * Complex64::from_polar(1.0, -(k.0[0] as f64) * x);
            }
            let coeff = acc * (tau / ng as f64) / tau.sqrt();
            assert!((out[i] + coeff).norm() < 1e-12, "{k:?}");
        }
    }

    #[test]
    fn deterministic_decay() {
        let lat = lattice(3);
        let mut integ = Integrator::local_phi4(lat.clone(), 0.0, 0.05).unwrap().without_noise();
        // mass coefficient 0 plus the unit mass from the linear part; small data decays
        let mut s = LangevinState::new(vec![Complex64::new(0.01, 0.005); lat.len()], 1);
        let n0: f64 = s.z.iter().map(|c| c.norm_sqr()).sum();
        for _ in 0..2000 {
            integ.step(&mut s).unwrap();
        }
        let n1: f64 = s.z.iter().map(|c| c.norm_sqr()).sum();
        assert!(n1 < 1e-6 * n0);
    }

    #[test]
    fn blow_up_is_reported() {
        let lat = lattice(1);
        let mut integ = Integrator::local_phi4(lat.clone(), 0.0, 0.5).unwrap().without_noise();
        let mut s = LangevinState::new(vec![Complex64::new(1e3, 0.0); lat.len()], 1);
        let mut err = None;
        for _ in 0..50 {
            if let Err(e) = integ.step(&mut s) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(err, Some(Error::BlowUp { .. })));
    }

    #[test]
    fn one_mode_hartree_matches_density() {
        // single mode: radial law of |z|^2 against the one-mode quadrature
        let lat = Arc::new(ModeLattice::from_modes(1, vec![Mode::ZERO]).unwrap());
        let p = Potential::gaussian(1.0, 0.1).unwrap();
        let spec = InteractionSpec::desk(lat.clone(), 0.3);
        let om = crate::classical::OneMode::new(&p, &spec).unwrap();
        let mut integ = Integrator::hartree(&p, &spec, 0.01).unwrap();
        let mut s = LangevinState::from_free_field(&lat, 2);
        let edges: Vec<f64> = (0..=16).map(|i| i as f64 * 0.5).collect();
        let mut counts = vec![0usize; edges.len()];
        let n = 2_000_000;
        for _ in 0..n {
            integ.step(&mut s).unwrap();
            let x = s.z[0].norm_sqr();
            let b = edges.partition_point(|&e| e <= x) - 1;
            counts[b] += 1;
        }
        let mut tv = 0.0;
        for b in 0..edges.len() {
            let hi = edges.get(b + 1).copied().unwrap_or(1e3);
            tv += (counts[b] as f64 / n as f64 - om.probability(edges[b], hi).unwrap()).abs();
        }
        assert!(0.5 * tv < 0.03, "tv {}", 0.5 * tv);
    }

    #[test]
    fn record_count_and_resume() {
        let cfg = LangevinConfig { t_total: 12.0, burn_in: 2.0, record_stride: 0.5, dt: 0.05, ..Default::default() };
        let full = simulate(&cfg).unwrap();
        assert_eq!(full.records().len() as u64, cfg.record_count());
        assert_eq!(cfg.record_count(), 21);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ck");
        let mut part = Simulation::new(cfg.clone()).unwrap();
        assert!(!part.advance(77).unwrap());
        part.checkpoint(&stem).unwrap();
        drop(part);
        let mut resumed = Simulation::resume(&stem).unwrap();
        resumed.run().unwrap();
        assert_eq!(resumed.state().z, full.state().z);
        assert_eq!(resumed.records(), full.records());
        assert_eq!(resumed.summary().m1, full.summary().m1);
        let csv_path = dir.path().join("series.csv");
        resumed.write_csv(&csv_path).unwrap();
        let text = std::fs::read_to_string(csv_path).unwrap();
        assert_eq!(text.lines().count(), 22);
    }

    #[test]
    fn linear_norm_matches_free_sum() {
        let cfg = LangevinConfig { model: Model::Linear, t_total: 20_000.0, burn_in: 5.0, dt: 0.1, ..Default::default() };
        let sim = simulate(&cfg).unwrap();
        let lat = cfg.lattice().unwrap();
        let exact: f64 = lat.bracket2().iter().map(|b| 1.0 / b).sum();
        let s = sim.summary().norm2;
        assert!((s.mean - exact).abs() < 4.0 * s.stderr, "{s:?} vs {exact}");
    }

    #[test]
    fn stationary_moments_match_chain() {
        let cfg = LangevinConfig { t_total: 40_000.0, burn_in: 10.0, dt: 0.02, eps: 0.2, ..Default::default() };
        let sim = simulate(&cfg).unwrap();
        let lat = cfg.lattice().unwrap();
        let p = Potential::gaussian(1.0, 0.2).unwrap();
        let spec = InteractionSpec::desk(lat.clone(), hartree_theta(&p, &lat, 1.0).unwrap());
        let chain_cfg = crate::classical::ChainConfig { samples: 400_000, ..Default::default() };
        let ens = crate::classical::mcmc_mu_neps(&p, &spec, &chain_cfg, 5).unwrap();
        let mut phi = crate::spectral::SpectralField::zeros(lat.clone());
        phi.coeffs_mut()[lat.index_of(Mode::ZERO).unwrap()] = Complex64::new(1.0, 0.0);
        let mc = crate::classical::moments(&ens, &phi, 1).unwrap();
        let lv = sim.summary().m1;
        // loose: exponential Euler carries an O(dt) bias
        assert!((mc.mean - lv.mean).abs() < 3.0 * (mc.stderr.powi(2) + lv.stderr.powi(2)).sqrt() + 0.02 * mc.mean, "{mc:?} {lv:?}");
    }
}
