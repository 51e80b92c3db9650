//! Experiment pipelines: flat configuration, per-criterion checks, CSV tables and an
//! atomically written run manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classical::{Chain, OneMode, SamplerKind};
use crate::counterterms::{self, a_eps, b_eps_components, b_eps_n, c1_c2, c1_c2_eps, six_b_eps};
use crate::definetti::{antinormal_moment, definetti_moment, poisson_moments, LineObservable, LowerSymbol};
use crate::error::{Error, Result};
use crate::fock::{self, gibbs, gibbs_adaptive, kinetic, random_density, FockBasis, InteractionParams};
use crate::ideal_gas;
use crate::langevin::{hartree_theta, local_mass, LangevinConfig, Model, Simulation, Summary};
use crate::persist::write_atomic;
use crate::rng::stream;
use crate::spectral::{CutoffKind, InteractionSpec, Mode, ModeLattice, Potential};
use crate::stats::{loglog_slope, BatchMeans, Estimate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Counterterms,
    IdealGas,
    Invariance,
    FreeLimit,
    SemiclassicalBridge,
    DefinettiIdentity,
    Phi4Limit,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Counterterms,
        Experiment::IdealGas,
        Experiment::FreeLimit,
        Experiment::SemiclassicalBridge,
        Experiment::DefinettiIdentity,
        Experiment::Invariance,
        Experiment::Phi4Limit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Counterterms => "counterterms",
            Experiment::IdealGas => "ideal-gas",
            Experiment::Invariance => "invariance",
            Experiment::FreeLimit => "free-limit",
            Experiment::SemiclassicalBridge => "semiclassical-bridge",
            Experiment::DefinettiIdentity => "definetti-identity",
            Experiment::Phi4Limit => "phi4-limit",
        }
    }

    /// Acceptance criteria this experiment decides.
    pub fn criteria(self) -> &'static [u8] {
        match self {
            Experiment::Counterterms => &[1, 2],
            Experiment::IdealGas => &[3],
            Experiment::FreeLimit => &[4],
            Experiment::SemiclassicalBridge => &[5, 8, 10],
            Experiment::DefinettiIdentity => &[6],
            Experiment::Invariance => &[7],
            Experiment::Phi4Limit => &[9],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL.iter().copied().find(|e| e.name() == s).ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Flat run configuration. Every key is optional in the file; missing keys keep the
/// preset of the chosen experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Compose theta from the continuum counterterm sums instead of the cutoff-lattice ones.
    pub paper_constants: bool,
    /// Torus dimension for the dynamical runs.
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub eps: f64,
    /// Gaussian interaction profile width.
    pub c: f64,
    /// Renormalized mass.
    pub m: f64,
    /// Counterterm truncation |k|_inf <= k_sum.
    pub k_sum: usize,
    /// eps sweep for trend checks.
    pub eps_sweep: Vec<f64>,
    /// eps sweep for the mass-shift convergence clause.
    pub eps_shift_sweep: Vec<f64>,
    /// Time at which the mass shifts are compared with their continuum values.
    pub shift_time: f64,
    pub lambda_sweep: Vec<f64>,
    /// Ideal-gas residual lambdas.
    pub gas_lambdas: Vec<f64>,
    pub n_max: usize,
    /// Fock modes along the first axis.
    pub modes: Vec<i32>,
    pub random_states: usize,
    pub max_order: usize,
    pub dt_ladder: Vec<f64>,
    pub t_total: f64,
    pub burn_in: f64,
    pub mcmc_steps: u64,
    /// Number of combined standard errors allowed in statistical comparisons.
    pub sigma: f64,
}

impl ExperimentConfig {
    pub fn preset(experiment: Experiment) -> Self {
        let base = ExperimentConfig {
            experiment,
            seed: 1,
            paper_constants: false,
            d: 1,
            n: 4,
            eps: 0.1,
            c: 1.0,
            m: 1.0,
            k_sum: 40,
            eps_sweep: vec![0.2, 0.1, 0.05],
            eps_shift_sweep: vec![0.4, 0.2, 0.1],
            shift_time: 10.0,
            lambda_sweep: vec![0.2, 0.1, 0.05],
            gas_lambdas: vec![1e-2, 1e-3],
            n_max: 10,
            modes: vec![0, 1],
            random_states: 100,
            max_order: 3,
            dt_ladder: vec![0.02, 0.01, 0.005],
            t_total: 2e6,
            burn_in: 10.0,
            mcmc_steps: 16_000_000,
            sigma: 3.0,
        };
        match experiment {
            Experiment::Counterterms => ExperimentConfig { d: 3, ..base },
            Experiment::FreeLimit => ExperimentConfig { modes: vec![0, 1, -1, 2, -2], ..base },
            Experiment::DefinettiIdentity => ExperimentConfig { n_max: 8, random_states: 10, ..base },
            Experiment::SemiclassicalBridge => ExperimentConfig { modes: vec![0], max_order: 7, t_total: 2e5, dt_ladder: vec![0.02], ..base },
            Experiment::Phi4Limit => ExperimentConfig { t_total: 5e5, dt_ladder: vec![0.02], ..base },
            _ => base,
        }
    }

    /// Preset for `experiment` overlaid with the keys of a TOML document.
    pub fn from_toml(experiment: Experiment, text: &str) -> Result<Self> {
        let mut doc = toml::Table::try_from(Self::preset(experiment)).map_err(|e| Error::Config(e.to_string()))?;
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (k, v) in user {
            if k == "experiment" {
                continue;
            }
            if !doc.contains_key(&k) {
                return Err(Error::Config(format!("unknown key '{k}'")));
            }
            doc.insert(k, v);
        }
        doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn potential(&self, eps: f64) -> Result<Potential> {
        Potential::gaussian(self.c, eps)
    }

    fn basis_modes(&self) -> Vec<Mode> {
        self.modes.iter().map(|&k| Mode::new(&[k])).collect()
    }

    /// Mass offset for the Hartree dynamics on `lattice`.
    pub fn theta(&self, p: &Potential, lattice: &ModeLattice) -> Result<f64> {
        if self.paper_constants {
            let a = a_eps(p, lattice.dim(), self.k_sum)?.value;
            let six_b = six_b_eps(p, lattice.dim(), self.k_sum)?.value;
            Ok(a - six_b + 1.0 - self.m)
        } else {
            hartree_theta(p, lattice, self.m)
        }
    }
}

/// Rectangular numeric table written as CSV.
#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// CSV with the provenance columns appended to every row.
    pub fn write_csv(&self, path: &Path, config_hash: &str, seed: u64) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.columns.clone();
        header.push("config_hash".into());
        header.push("seed".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.iter().map(|x| format!("{x:e}")).collect();
            rec.push(config_hash.into());
            rec.push(seed.to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(path, &bytes)
    }
}

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub criterion: u8,
    pub title: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
    pub metrics: BTreeMap<String, f64>,
}

impl Check {
    fn new(criterion: u8, title: &str, budget_seconds: f64) -> Self {
        Check { criterion, title: title.into(), pass: true, detail: String::new(), seconds: 0.0, budget_seconds, metrics: BTreeMap::new() }
    }

    fn metric(&mut self, key: &str, v: f64) {
        self.metrics.insert(key.into(), v);
    }

    /// Record a clause; the check passes only if every clause does.
    fn clause(&mut self, ok: bool, text: String) {
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(if ok { "ok " } else { "FAILED " });
        self.detail.push_str(&text);
        self.pass &= ok;
    }

    fn finish(mut self, start: Instant) -> Self {
        self.seconds = start.elapsed().as_secs_f64();
        let ok = self.seconds <= self.budget_seconds;
        let s = format!("runtime {:.1}s of {:.0}s", self.seconds, self.budget_seconds);
        self.clause(ok, s);
        self
    }
}

/// Checks plus tables produced by one criterion.
pub struct Outcome {
    pub check: Check,
    pub tables: Vec<Table>,
    pub truncation: BTreeMap<String, f64>,
}

/// Machine-readable summary of a run.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub experiment: Experiment,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub tables: Vec<String>,
    pub truncation: BTreeMap<String, f64>,
    pub all_pass: bool,
}

pub fn criterion(n: u8, cfg: &ExperimentConfig) -> Result<Outcome> {
    match n {
        1 => counterterm_identities(cfg),
        2 => counterterm_scaling(cfg),
        3 => ideal_gas_residual(cfg),
        4 => free_limit(cfg),
        5 => variational_principle(cfg),
        6 => definetti_identity(cfg),
        7 => invariance(cfg),
        8 => semiclassical_bridge(cfg),
        9 => phi4_limit(cfg),
        10 => boundedness(cfg),
        _ => Err(Error::Config(format!("no criterion {n}"))),
    }
}

/// Run every criterion of the configured experiment and write tables plus `manifest.json`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out)?;
    let hash = cfg.hash();
    let mut checks = Vec::new();
    let mut names = Vec::new();
    let mut truncation = BTreeMap::new();
    for &n in cfg.experiment.criteria() {
        let o = criterion(n, cfg)?;
        for t in &o.tables {
            let file = format!("{}.csv", t.name);
            t.write_csv(&out.join(&file), &hash, cfg.seed)?;
            names.push(file);
        }
        truncation.extend(o.truncation);
        checks.push(o.check);
    }
    let manifest = Manifest {
        experiment: cfg.experiment,
        config_hash: hash,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        all_pass: checks.iter().all(|c| c.pass),
        checks,
        tables: names,
        truncation,
    };
    write_atomic(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Default output directory for an experiment under `root`.
pub fn run_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join(format!("{}-{}", cfg.experiment, &cfg.hash()[..12]))
}

fn outcome(check: Check, tables: Vec<Table>) -> Outcome {
    Outcome { check, tables, truncation: BTreeMap::new() }
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

// ---------------------------------------------------------------- counterterms

fn counterterm_identities(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let mut check = Check::new(1, "counterterm recombination identities", 60.0);
    let mut table = Table::new("counterterm_identities", &["eps", "k_sum", "N", "six_b", "recombined", "residual"]);
    let mut worst: f64 = 0.0;
    for &eps in &cfg.eps_sweep {
        let p = cfg.potential(eps)?;
        for k_sum in [cfg.k_sum / 4, cfg.k_sum] {
            let b = b_eps_components(&p, 3, k_sum)?;
            worst = worst.max(b.residual().abs());
            table.push(vec![eps, k_sum as f64, f64::NAN, b.six_b, b.recombined(), b.residual()]);
        }
        for n in [2, 4, 6] {
            let lat = ModeLattice::build(3, n, CutoffKind::Sharp)?;
            let b = b_eps_n(&p, &lat)?;
            worst = worst.max(b.residual().abs());
            table.push(vec![eps, f64::NAN, n as f64, b.six_b, b.recombined(), b.residual()]);
        }
    }
    check.metric("max_residual", worst);
    check.clause(worst <= 1e-14, format!("max |6b - (b1+2b2+2b3+b4)| = {worst:.2e} over continuum and cutoff sums"));
    Ok(outcome(check.finish(start), vec![table]))
}

fn counterterm_scaling(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let mut check = Check::new(2, "counterterm scaling in eps", f64::INFINITY);
    let mut tables = Vec::new();

    let eps0 = 0.05;
    let p = cfg.potential(eps0)?;
    let a = a_eps(&p, 3, 160)?;
    let target = 1.0 / (4.0 * std::f64::consts::PI.powf(1.5));
    let rel = (eps0 * a.value - target).abs() / target;
    check.metric("eps_a", eps0 * a.value);
    check.metric("eps_a_relative_deviation", rel);
    check.clause(rel <= 0.05, format!("eps*a = {:.6} vs {target:.6} at eps=0.05, K=160 ({:.1}% off)", eps0 * a.value, 100.0 * rel));

    let mut t_b = Table::new("six_b_scaling", &["eps", "k_sum", "six_b", "tail_estimate", "ratio_to_log"]);
    let mut ratios = Vec::new();
    for &eps in &cfg.eps_sweep {
        let k = (16.0 / eps).round() as usize;
        let b = six_b_eps(&cfg.potential(eps)?, 3, k)?;
        let r = b.value / eps.ln().abs();
        ratios.push(r);
        t_b.push(vec![eps, k as f64, b.value, b.tail, r]);
    }
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &r| (l.min(r), h.max(r)));
    let drift = (hi - lo) / lo;
    check.metric("six_b_ratio_drift", drift);
    check.clause(drift < 0.25, format!("6b/|log eps| drift {:.0}% over eps sweep", 100.0 * drift));
    tables.push(t_b);

    let cont = c1_c2(&cfg.potential(1.0)?)?;
    let mut t_c = Table::new("mass_shift_convergence", &["eps", "t", "c1", "c2", "c1_gap", "c2_gap", "error"]);
    let (mut g1, mut g2) = (Vec::new(), Vec::new());
    for &eps in &cfg.eps_shift_sweep {
        let s = c1_c2_eps(&cfg.potential(eps)?, cfg.shift_time, 8)?;
        g1.push((s.c1 - cont.c1).abs());
        g2.push((s.c2 - cont.c2).abs());
        t_c.push(vec![eps, cfg.shift_time, s.c1, s.c2, (s.c1 - cont.c1).abs(), (s.c2 - cont.c2).abs(), s.error]);
    }
    t_c.push(vec![0.0, f64::INFINITY, cont.c1, cont.c2, 0.0, 0.0, cont.error]);
    check.clause(strictly_decreasing(&g1) && strictly_decreasing(&g2), format!("|c1(t)-C1| = {}, |c2(t)-C2| = {} strictly decreasing", sci(&g1), sci(&g2)));
    tables.push(t_c);
    let mut o = outcome(check.finish(start), tables);
    o.truncation.insert("a_eps_tail".into(), a.tail);
    Ok(o)
}

// ---------------------------------------------------------------- ideal gas

fn ideal_gas_residual(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let mut check = Check::new(3, "ideal gas expansion and C0 lattice sum", 10.0);
    let mut t = Table::new("ideal_gas", &["lambda", "rho0", "leading", "c0_term", "residual_over_sqrt_lambda"]);
    let mut r = Vec::new();
    for &lam in &cfg.gas_lambdas {
        let rep = ideal_gas::report(lam)?;
        r.push(rep.residual_over_sqrt);
        t.push(vec![lam, rep.rho0, rep.leading, rep.c0_term, rep.residual_over_sqrt]);
    }
    let ratio = r.iter().map(|x| x.abs()).fold(0.0, f64::max) / r.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    check.metric("residual_ratio", ratio);
    check.clause(ratio <= 2.0, format!("|residual|/sqrt(lambda) = {r:.4?}, ratio {ratio:.3}"));
    let three = ideal_gas::c0(3)?;
    let reference = ideal_gas::c0(8)?;
    let gap = (three.value - reference.value).abs();
    check.metric("c0_three_shell_gap", gap);
    check.clause(gap <= 1e-12, format!("C0 after 3 shells within {gap:.1e} of the 8-shell value {:.13}", reference.value));
    let mut tc = Table::new("c0_shells", &["shells", "value", "error"]);
    for s in 1..=5 {
        let e = ideal_gas::c0(s)?;
        tc.push(vec![s as f64, e.value, e.error]);
    }
    Ok(outcome(check.finish(start), vec![t, tc]))
}

// ---------------------------------------------------------------- quantum

fn free_limit(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let mut check = Check::new(4, "free thermal occupations approach the free-field variances", 60.0);
    let mut t = Table::new("free_limit", &["lambda", "mode", "n_max", "lambda_occupation", "free_variance", "deviation", "closed_form_deviation"]);
    let mut worst: f64 = 0.0;
    let mut trunc = BTreeMap::new();
    let mut monotone = true;
    for k in cfg.basis_modes() {
        let mu = k.bracket2();
        let mut prev = f64::INFINITY;
        for &lam in &cfg.lambda_sweep {
            // the free state factorizes over modes, so each mode is solved on its own
            let start_cap = (10.0 / (lam * mu)).ceil() as usize;
            let (basis, st) = gibbs_adaptive(|b| Ok(kinetic(b).scale(Complex64::new(lam, 0.0))), 1, &[k], start_cap, 1e-10)?;
            let occ = lam * st.occupation(0);
            let dev = (occ - 1.0 / mu).abs();
            let closed = (lam / (lam * mu).exp_m1() - 1.0 / mu).abs();
            worst = worst.max(dev / lam);
            monotone &= dev < prev;
            prev = dev;
            trunc.insert(format!("n_max[k={},lambda={lam}]", k.components(1)[0]), basis.n_max() as f64);
            t.push(vec![lam, k.components(1)[0] as f64, basis.n_max() as f64, occ, 1.0 / mu, dev, closed]);
        }
    }
    check.metric("max_deviation_over_lambda", worst);
    check.clause(worst <= 0.6, format!("max |lambda<n_k> - 1/<k>^2| / lambda = {worst:.4}"));
    check.clause(monotone, "deviation decreases along the lambda sweep for every mode".into());
    let mut o = outcome(check.finish(start), vec![t]);
    o.truncation = trunc;
    Ok(o)
}

fn variational_principle(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let mut check = Check::new(5, "quantum variational principle", 120.0);
    let basis = Arc::new(FockBasis::new(1, cfg.basis_modes(), cfg.n_max)?);
    let p = cfg.potential(cfg.eps)?;
    let lam = cfg.lambda_sweep[0];
    let params = InteractionParams::desk(lam, 0.3);
    let w = fock::build_w(&basis, &p, &params)?;
    let h0 = kinetic(&basis).scale(Complex64::new(lam, 0.0));
    let g0 = gibbs(&h0)?;
    let gl = gibbs(&h0.add(&w.op))?;
    let (lzl, lz0) = (gl.log_z.expect("gibbs"), g0.log_z.expect("gibbs"));
    let at_min = fock::variational_gap(&gl, &g0, &w.op, lzl, lz0)?;
    let mut rng = stream(cfg.seed, 5);
    let mut t = Table::new("variational_gap", &["draw", "number_conserving", "gap"]);
    let mut min_gap = f64::INFINITY;
    for i in 0..cfg.random_states {
        let conserving = i % 2 == 0;
        let r = random_density(&basis, &mut rng, conserving)?;
        let g = fock::variational_gap(&r, &g0, &w.op, lzl, lz0)?;
        min_gap = min_gap.min(g);
        t.push(vec![i as f64, conserving as u8 as f64, g]);
    }
    t.push(vec![-1.0, 1.0, at_min]);
    check.metric("gap_at_gibbs", at_min);
    check.metric("min_random_gap", min_gap);
    check.clause(at_min.abs() <= 1e-9, format!("gap(Gibbs) = {at_min:.2e}"));
    check.clause(min_gap >= -1e-9, format!("min gap over {} random states = {min_gap:.4}", cfg.random_states));
    let mut o = outcome(check.finish(start), vec![t]);
    o.truncation.insert("dim".into(), basis.len() as f64);
    o.truncation.insert("dropped_vhat".into(), w.dropped_vhat);
    Ok(o)
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn definetti_identity(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let mut check = Check::new(6, "de Finetti moment identity and Poisson weights", 120.0);
    let basis = Arc::new(FockBasis::new(1, cfg.basis_modes(), cfg.n_max)?);
    let lam = cfg.lambda_sweep[0];
    let mut rng = stream(cfg.seed, 6);
    let mut t = Table::new("definetti_residuals", &["draw", "k", "identity_residual", "poisson_residual", "remainder_trace_norm", "bound"]);
    let (mut worst_id, mut worst_p): (f64, f64) = (0.0, 0.0);
    for i in 0..cfg.random_states {
        let st = random_density(&basis, &mut rng, true)?;
        let phi: Vec<Complex64> = (0..basis.n_modes()).map(|_| crate::rng::complex_normal(&mut rng, 1.0)).collect();
        let norm = phi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let phi: Vec<Complex64> = phi.iter().map(|z| z / norm).collect();
        for k in 1..=cfg.max_order {
            let alg = definetti_moment(&st, basis.modes(), lam, k)?;
            let anti = antinormal_moment(&st, lam, k)?;
            let id = max_abs(&(&alg.moment - &anti));
            // diagonal slice along phi against the one-line Poisson formula
            let m = basis.n_modes();
            let v = nalgebra::DVector::from_iterator(m.pow(k as u32), (0..m.pow(k as u32)).map(|mut x| {
                let mut z = Complex64::new(1.0, 0.0);
                for _ in 0..k {
                    z *= phi[x % m];
                    x /= m;
                }
                z
            }));
            let slice = (v.adjoint() * &alg.moment * &v)[(0, 0)].re;
            let pois = poisson_moments(&st, &phi, lam, LineObservable::Power(k as u32))?;
            let pr = (slice - pois).abs() / pois.abs().max(1.0);
            worst_id = worst_id.max(id);
            worst_p = worst_p.max(pr);
            t.push(vec![i as f64, k as f64, id, pr, alg.remainder_trace_norm, alg.bound]);
        }
    }
    check.metric("identity_residual", worst_id);
    check.metric("poisson_residual", worst_p);
    check.clause(worst_id <= 1e-10, format!("algebraic vs anti-normal-ordered moments: {worst_id:.1e}"));
    check.clause(worst_p <= 1e-10, format!("Poisson-weight formula vs moment slice: {worst_p:.1e}"));

    // one-mode quadrature of the lower symbol
    let one = Arc::new(FockBasis::new(1, vec![Mode::ZERO], cfg.n_max)?);
    let st = random_density(&one, &mut rng, true)?;
    let sym = LowerSymbol::new(&st, one.modes(), lam)?;
    let mut worst_q: f64 = 0.0;
    let norm = sym.integrate(24, 4 * cfg.n_max + 8, |_| Complex64::new(1.0, 0.0))?.re;
    worst_q = worst_q.max((norm - 1.0).abs());
    for k in 1..=2u32 {
        let q = sym.integrate(24, 4 * cfg.n_max + 8, |u| Complex64::new(u[0].norm_sqr().powi(k as i32), 0.0))?.re;
        let p = poisson_moments(&st, &[Complex64::new(1.0, 0.0)], lam, LineObservable::Power(k))?;
        worst_q = worst_q.max((q - p).abs());
    }
    check.metric("quadrature_residual", worst_q);
    check.clause(worst_q <= 1e-8, format!("one-mode lower-symbol quadrature vs closed form: {worst_q:.1e}"));
    let mut o = outcome(check.finish(start), vec![t]);
    o.truncation.insert("dim".into(), basis.len() as f64);
    Ok(o)
}

/// Quantum and classical sides of the one-mode bridge at one lambda.
#[derive(Clone, Debug, Serialize)]
pub struct BridgePoint {
    pub lambda: f64,
    pub n_max: usize,
    pub quantum_free_energy: f64,
    pub classical_free_energy: f64,
    /// lambda^k Tr[N^k G] for k = 1..=max_order.
    pub quantum_moments: Vec<f64>,
    /// k! lambda^k <G^(k)>, i.e. the falling-factorial form.
    pub quantum_falling: Vec<f64>,
    pub classical_moments: Vec<f64>,
}

/// One-mode desk bridge: Fock space over the zero mode against the one-mode classical measure.
pub fn bridge_point(cfg: &ExperimentConfig, lambda: f64) -> Result<BridgePoint> {
    let lattice = Arc::new(ModeLattice::from_modes(1, vec![Mode::ZERO])?);
    let p = cfg.potential(cfg.eps)?;
    let theta = cfg.theta(&p, &lattice)?;
    let spec = InteractionSpec::desk(lattice.clone(), theta);
    let classical = OneMode::new(&p, &spec)?;
    let params = InteractionParams::desk(lambda, theta);
    let start_cap = (4.0 / lambda).ceil() as usize;
    let h = |b: &Arc<FockBasis>| fock::hamiltonian(b, &p, &params);
    let (basis, gl) = gibbs_adaptive(h, 1, &[Mode::ZERO], start_cap, 1e-12)?;
    let g0 = gibbs(&kinetic(&basis).scale(Complex64::new(lambda, 0.0)))?;
    let phi = [Complex64::new(1.0, 0.0)];
    let mut qm = Vec::new();
    let mut qf = Vec::new();
    let mut cm = Vec::new();
    for k in 1..=cfg.max_order as u32 {
        let c = fock::correlation_power(&gl, &phi, lambda, k)?;
        qm.push(c.value);
        qf.push(c.falling.expect("power observable"));
        cm.push(classical.moment(k)?);
    }
    Ok(BridgePoint {
        lambda,
        n_max: basis.n_max(),
        quantum_free_energy: -(gl.log_z.expect("gibbs") - g0.log_z.expect("gibbs")),
        classical_free_energy: -classical.log_partition(),
        quantum_moments: qm,
        quantum_falling: qf,
        classical_moments: cm,
    })
}

/// Composite Simpson rule on [0, 80] for log int e^{-x - D(x)} dx, D(x) = v(0)/(4 pi) (x-1)^2 - theta (x-1).
fn one_mode_oracle(vhat0: f64, theta: f64) -> f64 {
    let d = |x: f64| vhat0 / (4.0 * std::f64::consts::PI) * (x - 1.0).powi(2) - theta * (x - 1.0);
    let n = 200_000;
    let h = 80.0 / n as f64;
    let mut s = 0.0;
    for i in 0..=n {
        let x = i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * (-x - d(x)).exp();
    }
    (s * h / 3.0).ln()
}

fn semiclassical_bridge(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let mut check = Check::new(8, "semiclassical bridge on one matched mode", 600.0);
    let lattice = ModeLattice::from_modes(1, vec![Mode::ZERO])?;
    let p = cfg.potential(cfg.eps)?;
    let theta = cfg.theta(&p, &lattice)?;
    let oracle = one_mode_oracle(p.hat(Mode::ZERO), theta);
    let classical = OneMode::new(&p, &InteractionSpec::desk(Arc::new(lattice), theta))?;
    let oracle_gap = (classical.log_partition() - oracle).abs();
    check.metric("classical_oracle_gap", oracle_gap);
    check.clause(oracle_gap <= 1e-6, format!("classical log-partition vs Simpson oracle: {oracle_gap:.1e}"));

    let mut t = Table::new("bridge", &["lambda", "n_max", "quantum_free_energy", "classical_free_energy", "free_energy_gap", "moment1_quantum", "moment1_classical", "moment1_gap"]);
    let mut gaps = Vec::new();
    let mut m_gaps = Vec::new();
    for &lam in &cfg.lambda_sweep {
        let b = bridge_point(cfg, lam)?;
        let g = (b.quantum_free_energy - b.classical_free_energy).abs();
        let mg = (b.quantum_falling[0] - b.classical_moments[0]).abs();
        gaps.push(g);
        m_gaps.push(mg);
        t.push(vec![lam, b.n_max as f64, b.quantum_free_energy, b.classical_free_energy, g, b.quantum_falling[0], b.classical_moments[0], mg]);
    }
    let last = *gaps.last().expect("nonempty sweep");
    check.clause(strictly_decreasing(&gaps), format!("free-energy gaps {gaps:.4?} decreasing"));
    check.clause(last < 0.05, format!("gap {last:.4} < 0.05 at the smallest lambda"));
    let slope = loglog_slope(&cfg.lambda_sweep, &m_gaps);
    check.metric("moment_gap_exponent", slope);
    check.clause((0.5..=1.5).contains(&slope), format!("k=1 moment gap exponent {slope:.3}"));
    Ok(outcome(check.finish(start), vec![t]))
}

fn boundedness(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let mut check = Check::new(10, "moment boundedness and long-time stability", f64::INFINITY);
    let k_max = cfg.max_order;
    let mut cols: Vec<String> = vec!["lambda".into()];
    cols.extend((1..=k_max).map(|k| format!("moment_{k}")));
    let col_refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
    let mut t = Table::new("quantum_moments", &col_refs);
    let points: Vec<BridgePoint> = cfg.lambda_sweep.iter().map(|&l| bridge_point(cfg, l)).collect::<Result<_>>()?;
    let mut finite = true;
    let mut violations = Vec::new();
    for b in &points {
        finite &= b.quantum_moments.iter().all(|x| x.is_finite());
        let mut row = vec![b.lambda];
        row.extend(&b.quantum_moments);
        t.push(row);
    }
    let mut cl = vec![0.0];
    cl.extend(&points[0].classical_moments);
    t.push(cl);
    for k in 0..k_max {
        let dist: Vec<f64> = points.iter().map(|b| (b.quantum_moments[k] - b.classical_moments[k]).abs()).collect();
        if !dist.windows(2).all(|w| w[1] <= w[0]) {
            violations.push(k + 1);
        }
    }
    check.clause(finite, "lambda^k Tr[N^k G] finite for every k and lambda".into());
    check.clause(violations.is_empty(), format!("distance to the classical moment non-increasing as lambda decreases (violations at k = {violations:?})"));

    // long-time stability of the Hartree dynamics
    let lat = Arc::new(ModeLattice::build(cfg.d, cfg.n, CutoffKind::Sharp)?);
    let p = cfg.potential(cfg.eps)?;
    let theta = cfg.theta(&p, &lat)?;
    let lc = LangevinConfig {
        model: Model::Hartree,
        d: cfg.d,
        n: cfg.n,
        eps: cfg.eps,
        c: cfg.c,
        m: cfg.m,
        theta: Some(theta),
        dt: cfg.dt_ladder[0],
        t_total: cfg.t_total,
        burn_in: cfg.burn_in,
        record_stride: 100.0,
        seed: cfg.seed,
        ..Default::default()
    };
    let (half, full) = doubling_run(&lc)?;
    let g1 = half.m1.sigma_gap(&full.m1);
    let g2 = half.m2.sigma_gap(&full.m2);
    let gn = half.norm2.sigma_gap(&full.norm2);
    let mut td = Table::new("langevin_doubling", &["t_total", "m1", "m1_err", "m2", "m2_err", "norm2", "norm2_err"]);
    for (tt, s) in [(0.5 * cfg.t_total, &half), (cfg.t_total, &full)] {
        td.push(vec![tt, s.m1.mean, s.m1.stderr, s.m2.mean, s.m2.stderr, s.norm2.mean, s.norm2.stderr]);
    }
    let ok = g1.max(g2).max(gn) <= cfg.sigma;
    check.clause(ok, format!("moments at T and 2T differ by {g1:.2}, {g2:.2}, {gn:.2} sigma"));
    Ok(outcome(check.finish(start), vec![t, td]))
}

fn doubling_run(lc: &LangevinConfig) -> Result<(Summary, Summary)> {
    let mut sim = Simulation::new(lc.clone())?;
    let half_steps = ((0.5 * lc.t_total) / lc.dt).round() as u64;
    sim.advance(half_steps)?;
    let half = sim.summary();
    sim.run()?;
    Ok((half, sim.summary()))
}

// ---------------------------------------------------------------- dynamics

/// Independence-sampler moments of |<e_0, Psi>|^2 and its square under mu_N^eps.
pub fn chain_moments(p: &Potential, spec: &InteractionSpec, steps: u64, seed: u64) -> Result<(Estimate, Estimate, f64)> {
    let lat = spec.lattice().clone();
    let probe = lat.index_of(Mode::ZERO).ok_or_else(|| Error::Config("lattice lacks the zero mode".into()))?;
    let mut chain = Chain::new(p, spec, SamplerKind::Independence, seed, 0)?;
    let mut b1 = BatchMeans::new(1000);
    let mut b2 = BatchMeans::new(1000);
    for _ in 0..steps {
        chain.step();
        let x = chain.state()[probe].norm_sqr();
        b1.push(x);
        b2.push(x * x);
    }
    Ok((b1.estimate(), b2.estimate(), chain.acceptance_rate()))
}

fn invariance(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let mut check = Check::new(7, "Langevin invariance of the Gibbs measure", 1200.0);
    let lat = Arc::new(ModeLattice::build(cfg.d, cfg.n, CutoffKind::Sharp)?);
    let p = cfg.potential(cfg.eps)?;
    let theta = cfg.theta(&p, &lat)?;
    let spec = InteractionSpec::desk(lat.clone(), theta);
    let (c1, c2, acc) = chain_moments(&p, &spec, cfg.mcmc_steps, cfg.seed)?;
    let mut t = Table::new("invariance", &["dt", "m1", "m1_err", "m2", "m2_err", "m1_sigma_gap", "m2_sigma_gap", "effective_samples"]);
    t.push(vec![0.0, c1.mean, c1.stderr, c2.mean, c2.stderr, 0.0, 0.0, c1.effective_samples]);
    let mut gaps1 = Vec::new();
    let mut gaps2 = Vec::new();
    let mut last: Option<Summary> = None;
    for &dt in &cfg.dt_ladder {
        let lc = LangevinConfig {
            model: Model::Hartree,
            d: cfg.d,
            n: cfg.n,
            eps: cfg.eps,
            c: cfg.c,
            m: cfg.m,
            theta: Some(theta),
            dt,
            t_total: cfg.t_total,
            burn_in: cfg.burn_in,
            record_stride: 100.0,
            seed: cfg.seed,
            ..Default::default()
        };
        let mut sim = Simulation::new(lc)?;
        sim.run()?;
        let s = sim.summary();
        gaps1.push((s.m1.mean - c1.mean).abs());
        gaps2.push((s.m2.mean - c2.mean).abs());
        t.push(vec![dt, s.m1.mean, s.m1.stderr, s.m2.mean, s.m2.stderr, s.m1.sigma_gap(&c1), s.m2.sigma_gap(&c2), s.m1.effective_samples]);
        last = Some(s);
    }
    let fine = last.expect("nonempty ladder");
    let (s1, s2) = (fine.m1.sigma_gap(&c1), fine.m2.sigma_gap(&c2));
    check.metric("mcmc_acceptance", acc);
    check.metric("m1_sigma_gap", s1);
    check.metric("m2_sigma_gap", s2);
    check.clause(s1 <= cfg.sigma && s2 <= cfg.sigma, format!("finest dt: m1 {:.5} vs {:.5} ({s1:.2} sigma), m2 {:.4} vs {:.4} ({s2:.2} sigma)", fine.m1.mean, c1.mean, fine.m2.mean, c2.mean));
    let eff = fine.m1.effective_samples.min(fine.m2.effective_samples).min(c1.effective_samples);
    check.metric("effective_samples", eff);
    check.clause(eff >= 1e6, format!("effective samples {eff:.3e}"));
    check.clause(strictly_decreasing(&gaps1) && strictly_decreasing(&gaps2), format!("gaps shrink as dt halves: m1 {gaps1:.4?}, m2 {gaps2:.4?}"));
    let mut o = outcome(check.finish(start), vec![t]);
    o.truncation.insert("modes".into(), lat.len() as f64);
    o.truncation.insert("theta".into(), theta);
    Ok(o)
}

fn phi4_limit(cfg: &ExperimentConfig) -> Result<Outcome> {
    let start = Instant::now();
    let mut check = Check::new(9, "Hartree dynamics approach the local model as eps shrinks", 1800.0);
    let lat = Arc::new(ModeLattice::build(cfg.d, cfg.n, CutoffKind::Sharp)?);
    let dt = cfg.dt_ladder[0];
    let base = LangevinConfig { d: cfg.d, n: cfg.n, c: cfg.c, m: cfg.m, dt, t_total: cfg.t_total, burn_in: cfg.burn_in, record_stride: 100.0, seed: cfg.seed, ..Default::default() };
    let local = LangevinConfig { model: Model::LocalPhi4, local_mass: Some(local_mass(&lat, cfg.m)?), ..base.clone() };
    let mut sim = Simulation::new(local)?;
    sim.run()?;
    let loc = sim.summary();
    let mut t = Table::new("phi4_limit", &["eps", "theta", "m1", "m1_err", "gap_to_local", "gap_sigma"]);
    t.push(vec![0.0, f64::NAN, loc.m1.mean, loc.m1.stderr, 0.0, 0.0]);
    let mut gaps: Vec<(f64, f64)> = Vec::new();
    for &eps in &cfg.eps_sweep {
        let p = cfg.potential(eps)?;
        let theta = cfg.theta(&p, &lat)?;
        let lc = LangevinConfig { model: Model::Hartree, eps, theta: Some(theta), ..base.clone() };
        let mut sim = Simulation::new(lc)?;
        sim.run()?;
        let s = sim.summary();
        let gap = (s.m1.mean - loc.m1.mean).abs();
        let sig = (s.m1.stderr.powi(2) + loc.m1.stderr.powi(2)).sqrt();
        gaps.push((gap, sig));
        t.push(vec![eps, theta, s.m1.mean, s.m1.stderr, gap, gap / sig]);
    }
    let ok = gaps.windows(2).all(|w| w[1].0 <= w[0].0 + cfg.sigma * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt());
    let g: Vec<f64> = gaps.iter().map(|x| x.0).collect();
    check.clause(ok, format!("|m1(Hartree) - m1(local)| = {g:.4?} over eps {:?}, monotone within {} sigma", cfg.eps_sweep, cfg.sigma));
    Ok(outcome(check.finish(start), vec![t]))
}

/// Table of logZ, occupations and correlation moments for the `quantum` subcommand.
pub fn quantum_table(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let p = cfg.potential(cfg.eps)?;
    let modes = cfg.basis_modes();
    let mut cols = vec!["lambda".to_string(), "n_max".into(), "log_z".into(), "log_z0".into(), "dropped_vhat".into()];
    cols.extend(modes.iter().map(|k| format!("lambda_occupation_{}", k.components(1)[0])));
    cols.extend((1..=cfg.max_order).map(|k| format!("moment_{k}")));
    let col_refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
    let mut t = Table::new("quantum", &col_refs);
    let basis = Arc::new(FockBasis::new(1, modes.clone(), cfg.n_max)?);
    let lattice = ModeLattice::from_modes(1, modes.clone()).ok();
    for &lam in &cfg.lambda_sweep {
        let theta = match &lattice {
            Some(l) => cfg.theta(&p, l)?,
            None => 0.0,
        };
        let params = InteractionParams::desk(lam, theta);
        let w = fock::build_w(&basis, &p, &params)?;
        let h0 = kinetic(&basis).scale(Complex64::new(lam, 0.0));
        let gl = gibbs(&h0.add(&w.op))?;
        let g0 = gibbs(&h0)?;
        let mut row = vec![lam, cfg.n_max as f64, gl.log_z.expect("gibbs"), g0.log_z.expect("gibbs"), w.dropped_vhat];
        row.extend((0..modes.len()).map(|m| lam * gl.occupation(m)));
        let mut phi = vec![Complex64::new(0.0, 0.0); modes.len()];
        phi[0] = Complex64::new(1.0, 0.0);
        for k in 1..=cfg.max_order as u32 {
            row.push(fock::correlation_power(&gl, &phi, lam, k)?.value);
        }
        t.push(row);
    }
    Ok(vec![t])
}

/// Residual table for the `definetti` subcommand.
pub fn definetti_table(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let o = definetti_identity(cfg)?;
    Ok(o.tables)
}

/// Full counterterm table for the `counterterms` subcommand.
pub fn counterterm_table(cfg: &ExperimentConfig) -> Result<counterterms::CountertermTable> {
    let p = cfg.potential(cfg.eps)?;
    let req = counterterms::TableRequest {
        d: cfg.d,
        k_sum: cfg.k_sum,
        b_k_sum: cfg.k_sum.min(20),
        time: if cfg.d == 3 { Some(cfg.shift_time) } else { None },
        cutoff: Some((cfg.n, CutoffKind::Sharp)),
    };
    counterterms::CountertermTable::compute(&p, &req)
}

/// Writes `name,value,error` rows with the provenance columns.
pub fn write_named_rows(path: &Path, rows: &[(String, f64, f64)], config_hash: &str, seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "value", "error", "config_hash", "seed"])?;
    for (name, v, e) in rows {
        w.write_record([name.clone(), format!("{v:e}"), format!("{e:e}"), config_hash.into(), seed.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Sweep table for the `ideal-gas` subcommand.
pub fn ideal_gas_table(cfg: &ExperimentConfig) -> Result<Table> {
    let mut t = Table::new("ideal_gas_sweep", &["lambda", "rho0", "tail", "leading", "c0_term", "remainder", "residual_over_sqrt_lambda"]);
    for &lam in &cfg.gas_lambdas {
        let r = ideal_gas::report(lam)?;
        t.push(vec![lam, r.rho0, r.tail, r.leading, r.c0_term, r.remainder, r.residual_over_sqrt]);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("bogus".parse::<Experiment>().is_err());
        let covered: Vec<u8> = {
            let mut v: Vec<u8> = Experiment::ALL.iter().flat_map(|e| e.criteria().iter().copied()).collect();
            v.sort();
            v
        };
        assert_eq!(covered, (1..=10).collect::<Vec<u8>>());
    }

    #[test]
    fn config_overlay_and_hash() {
        let cfg = ExperimentConfig::from_toml(Experiment::FreeLimit, "seed = 9\nlambda_sweep = [0.5, 0.25]\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lambda_sweep, vec![0.5, 0.25]);
        assert_eq!(cfg.modes, ExperimentConfig::preset(Experiment::FreeLimit).modes);
        assert!(ExperimentConfig::from_toml(Experiment::FreeLimit, "nonsense = 1").is_err());
        assert_eq!(cfg.hash(), cfg.clone().hash());
        assert_ne!(cfg.hash(), ExperimentConfig::preset(Experiment::FreeLimit).hash());
    }

    #[test]
    fn simpson_oracle_free_case() {
        // no interaction and no offset: int e^{-x} = 1
        assert!(one_mode_oracle(0.0, 0.0).abs() < 1e-12);
        // pure offset: int e^{-x + theta (x - 1)} = e^{-theta} / (1 - theta)
        let th: f64 = 0.3;
        assert!((one_mode_oracle(0.0, th) - (-th - (1.0 - th).ln())).abs() < 1e-10);
    }

    #[test]
    fn small_free_limit_run_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { modes: vec![0, 1], lambda_sweep: vec![0.5, 0.25], ..ExperimentConfig::preset(Experiment::FreeLimit) };
        let m = run(&cfg, dir.path()).unwrap();
        assert!(m.all_pass, "{:?}", m.checks);
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(text.contains(&cfg.hash()));
        let csv = std::fs::read_to_string(dir.path().join("free_limit.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4);
    }

    #[test]
    fn bridge_point_is_finite() {
        let cfg = ExperimentConfig { c: 1.0, max_order: 2, ..ExperimentConfig::preset(Experiment::SemiclassicalBridge) };
        // a vanishing profile switches the interaction off; theta then only shifts the mass
        let b = bridge_point(&ExperimentConfig { paper_constants: false, ..cfg.clone() }, 0.2).unwrap();
        assert!(b.quantum_free_energy.is_finite() && b.classical_free_energy.is_finite());
        assert!(b.quantum_moments[0] > 0.0);
    }
}
