//! Truncated bosonic Fock space over a finite mode set, second quantization, thermal
//! states and entropies.
//!
//! The basis keeps every occupation vector with total particle number <= n_max, ordered by
//! particle number, so number-conserving operators are block diagonal over contiguous
//! ranges. States store one spectral decomposition per block (eigenvectors and
//! log-probabilities); log of a Gibbs state is then exact even where e^{-H} underflows.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectral::{Mode, ModeLattice, Potential};
use crate::two_pi_pow;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Occupation basis with a cap on the total particle number.
#[derive(Debug)]
pub struct FockBasis {
    dim: usize,
    modes: Vec<Mode>,
    n_max: usize,
    occ: Vec<u16>,
    index: HashMap<Vec<u16>, u32>,
    sectors: Vec<Range<usize>>,
}

/// C(n, k) as f64 (exact for the sizes used here).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Number of occupation vectors with sum <= n_max over m modes.
pub fn fock_dimension(m: usize, n_max: usize) -> usize {
    (0..=n_max).map(|n| binomial(n + m - 1, m - 1).round() as usize).sum()
}

impl FockBasis {
    pub const MAX_DIM: usize = 2_000_000;

    /// `d` is the torus dimension the modes live in.
    pub fn new(d: usize, modes: Vec<Mode>, n_max: usize) -> Result<Self> {
        if modes.is_empty() {
            return Err(invalid("Fock basis needs at least one mode"));
        }
        if !(1..=3).contains(&d) {
            return Err(Error::Dimension(d));
        }
        let mut seen = std::collections::HashSet::new();
        if !modes.iter().all(|k| seen.insert(*k)) {
            return Err(invalid("duplicate modes in Fock basis"));
        }
        if n_max > u16::MAX as usize {
            return Err(invalid("occupation cap too large"));
        }
        let m = modes.len();
        let dim = fock_dimension(m, n_max);
        if dim > Self::MAX_DIM {
            return Err(invalid(format!("Fock dimension {dim} exceeds {}", Self::MAX_DIM)));
        }
        let mut occ = Vec::with_capacity(dim * m);
        let mut sectors = Vec::with_capacity(n_max + 1);
        let mut cur = vec![0u16; m];
        for n in 0..=n_max {
            let start = occ.len() / m;
            compositions(n as u16, 0, &mut cur, &mut occ);
            sectors.push(start..occ.len() / m);
        }
        let index = occ.chunks_exact(m).enumerate().map(|(i, s)| (s.to_vec(), i as u32)).collect();
        Ok(FockBasis { dim: d, modes, n_max, occ, index, sectors })
    }

    pub fn from_lattice(lattice: &ModeLattice, n_max: usize) -> Result<Self> {
        Self::new(lattice.dim(), lattice.modes().to_vec(), n_max)
    }

    pub fn torus_dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn len(&self) -> usize {
        self.occ.len() / self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn occupation(&self, i: usize) -> &[u16] {
        let m = self.modes.len();
        &self.occ[i * m..(i + 1) * m]
    }

    pub fn total(&self, i: usize) -> usize {
        self.occupation(i).iter().map(|&x| x as usize).sum()
    }

    pub fn index_of(&self, occ: &[u16]) -> Option<usize> {
        self.index.get(occ).map(|&i| i as usize)
    }

    pub fn mode_index(&self, k: Mode) -> Result<usize> {
        self.modes.iter().position(|&m| m == k).ok_or(Error::ModeNotInBasis(k))
    }

    /// Contiguous index range of the n-particle sector.
    pub fn sectors(&self) -> &[Range<usize>] {
        &self.sectors
    }
}

/// Append all occupation vectors with total `n` over positions `pos..` in lexicographic order.
fn compositions(n: u16, pos: usize, cur: &mut Vec<u16>, out: &mut Vec<u16>) {
    let m = cur.len();
    if pos == m - 1 {
        cur[pos] = n;
        out.extend_from_slice(cur);
        return;
    }
    for first in (0..=n).rev() {
        cur[pos] = first;
        compositions(n - first, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// Sparse operator on a Fock basis, compressed rows.
#[derive(Clone, Debug)]
pub struct FockOperator {
    basis: Arc<FockBasis>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<Complex64>,
    /// Set when built as Hermitian and checked to 1e-13.
    pub hermitian: bool,
    /// Set when no entry connects different particle-number sectors.
    pub number_conserving: bool,
}

impl FockOperator {
    /// Sum duplicate (row, col) entries; drops exact zeros.
    pub fn from_triplets(basis: &Arc<FockBasis>, mut t: Vec<(usize, usize, Complex64)>) -> Self {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let n = basis.len();
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(t.len());
        let mut rows = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            if let (Some(&lr), Some(&lc)) = (rows.last(), cols.last()) {
                if lr == r && lc as usize == c {
                    *vals.last_mut().expect("nonempty") += v;
                    continue;
                }
            }
            rows.push(r);
            cols.push(c as u32);
            vals.push(v);
        }
        let keep: Vec<bool> = vals.iter().map(|v| *v != ZERO).collect();
        let mut k = 0;
        let (mut c2, mut v2) = (Vec::new(), Vec::new());
        for i in 0..rows.len() {
            if keep[i] {
                row_ptr[rows[i] + 1] += 1;
                c2.push(cols[i]);
                v2.push(vals[i]);
                k += 1;
            }
        }
        let _ = k;
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut op = FockOperator { basis: basis.clone(), row_ptr, cols: c2, vals: v2, hermitian: false, number_conserving: false };
        op.number_conserving = op.check_number_conserving();
        op.hermitian = op.hermitian_deviation() <= 1e-13;
        op
    }

    pub fn zero(basis: &Arc<FockBasis>) -> Self {
        Self::from_triplets(basis, Vec::new())
    }

    pub fn identity(basis: &Arc<FockBasis>) -> Self {
        Self::diagonal(basis, &vec![1.0; basis.len()])
    }

    pub fn diagonal(basis: &Arc<FockBasis>, d: &[f64]) -> Self {
        Self::from_triplets(basis, d.iter().enumerate().map(|(i, &x)| (i, i, Complex64::new(x, 0.0))).collect())
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().zip(&self.vals[r]).map(|(&c, &v)| (c as usize, v))
    }

    pub fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        (0..self.basis.len()).flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v))).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.row(i).find(|&(c, _)| c == j).map_or(ZERO, |(_, v)| v)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.basis.len()).all(|i| self.row(i).all(|(j, _)| j == i))
    }

    fn check_number_conserving(&self) -> bool {
        (0..self.basis.len()).all(|i| {
            let n = self.basis.total(i);
            self.row(i).all(|(j, _)| self.basis.total(j) == n)
        })
    }

    pub fn hermitian_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..self.basis.len() {
            for (j, v) in self.row(i) {
                dev = dev.max((v - self.get(j, i).conj()).norm());
            }
        }
        dev
    }

    pub fn adjoint(&self) -> Self {
        let t = self.triplets().into_iter().map(|(i, j, v)| (j, i, v.conj())).collect();
        Self::from_triplets(&self.basis, t)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= s);
        out.hermitian = self.hermitian && s.im == 0.0;
        out
    }

    /// a A + b B.
    pub fn combine(&self, a: Complex64, other: &FockOperator, b: Complex64) -> Self {
        let mut t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (i, j, a * v)).collect();
        t.extend(other.triplets().into_iter().map(|(i, j, v)| (i, j, b * v)));
        Self::from_triplets(&self.basis, t)
    }

    pub fn add(&self, other: &FockOperator) -> Self {
        self.combine(Complex64::new(1.0, 0.0), other, Complex64::new(1.0, 0.0))
    }

    /// A + s * identity.
    pub fn shift(&self, s: f64) -> Self {
        self.add(&Self::identity(&self.basis).scale(Complex64::new(s, 0.0)))
    }

    /// Matrix product A B (within the truncated space).
    pub fn mul(&self, other: &FockOperator) -> Self {
        let n = self.basis.len();
        let mut t = Vec::new();
        let mut acc: HashMap<usize, Complex64> = HashMap::new();
        for i in 0..n {
            acc.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    *acc.entry(j).or_insert(ZERO) += a * b;
                }
            }
            t.extend(acc.iter().map(|(&j, &v)| (i, j, v)));
        }
        Self::from_triplets(&self.basis, t)
    }

    pub fn commutator(&self, other: &FockOperator) -> Self {
        self.mul(other).combine(Complex64::new(1.0, 0.0), &other.mul(self), Complex64::new(-1.0, 0.0))
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.basis.len()).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// Largest |entry|.
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Dense block on an index range (rows and columns).
    pub fn dense_block(&self, r: Range<usize>) -> DMatrix<Complex64> {
        let n = r.len();
        let mut m = DMatrix::from_element(n, n, ZERO);
        for i in r.clone() {
            for (j, v) in self.row(i) {
                if r.contains(&j) {
                    m[(i - r.start, j - r.start)] = v;
                }
            }
        }
        m
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        self.dense_block(0..self.basis.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ladder {
    Create,
    Annihilate,
}

/// a_k or a_k^*; creation terms that would leave the cap are dropped.
pub fn ladder(basis: &Arc<FockBasis>, k: Mode, kind: Ladder) -> Result<FockOperator> {
    let m = basis.mode_index(k)?;
    let mut t = Vec::new();
    for i in 0..basis.len() {
        let mut occ = basis.occupation(i).to_vec();
        let n = occ[m] as f64;
        match kind {
            Ladder::Annihilate if occ[m] > 0 => {
                occ[m] -= 1;
                let j = basis.index_of(&occ).expect("lower sector is complete");
                t.push((j, i, Complex64::new(n.sqrt(), 0.0)));
            }
            Ladder::Create => {
                occ[m] += 1;
                if let Some(j) = basis.index_of(&occ) {
                    t.push((j, i, Complex64::new((n + 1.0).sqrt(), 0.0)));
                }
            }
            _ => {}
        }
    }
    Ok(FockOperator::from_triplets(basis, t))
}

/// dGamma(A) = sum_{j,k} A_{jk} a_j^* a_k for an M x M one-body matrix.
pub fn dgamma(basis: &Arc<FockBasis>, one_body: &DMatrix<Complex64>) -> Result<FockOperator> {
    let m = basis.n_modes();
    if one_body.nrows() != m || one_body.ncols() != m {
        return Err(invalid("one-body matrix must be M x M"));
    }
    let mut t = Vec::new();
    for i in 0..basis.len() {
        let occ = basis.occupation(i);
        for k in 0..m {
            if occ[k] == 0 {
                continue;
            }
            let nk = occ[k] as f64;
            let mut lowered = occ.to_vec();
            lowered[k] -= 1;
            for j in 0..m {
                let a = one_body[(j, k)];
                if a == ZERO {
                    continue;
                }
                let mut raised = lowered.clone();
                raised[j] += 1;
                let amp = (nk * raised[j] as f64).sqrt();
                let r = basis.index_of(&raised).expect("same sector");
                t.push((r, i, a * amp));
            }
        }
    }
    let mut op = FockOperator::from_triplets(basis, t);
    op.number_conserving = true;
    Ok(op)
}

pub fn number_operator(basis: &Arc<FockBasis>) -> FockOperator {
    let d: Vec<f64> = (0..basis.len()).map(|i| basis.total(i) as f64).collect();
    FockOperator::diagonal(basis, &d)
}

/// dGamma(diag(<k>^2)): the free one-body energy.
pub fn kinetic(basis: &Arc<FockBasis>) -> FockOperator {
    let mu: Vec<f64> = basis.modes().iter().map(|k| k.bracket2()).collect();
    let d: Vec<f64> = (0..basis.len()).map(|i| basis.occupation(i).iter().zip(&mu).map(|(&n, m)| n as f64 * m).sum()).collect();
    FockOperator::diagonal(basis, &d)
}

/// dGamma(e_q): multiplication by e^{iqx}/(2pi)^{d/2}, restricted to in-basis pairs.
pub fn dgamma_plane_wave(basis: &Arc<FockBasis>, q: Mode) -> Result<FockOperator> {
    let m = basis.n_modes();
    let s = 1.0 / two_pi_pow(0.5 * basis.torus_dim() as f64);
    let mut a = DMatrix::from_element(m, m, ZERO);
    for (k, &mk) in basis.modes().iter().enumerate() {
        if let Ok(j) = basis.mode_index(mk + q) {
            a[(j, k)] = Complex64::new(s, 0.0);
        }
    }
    dgamma(basis, &a)
}

/// Every q with some in-basis pair (k, k+q).
pub fn representable_differences(basis: &FockBasis) -> Vec<Mode> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &a in basis.modes() {
        for &b in basis.modes() {
            if seen.insert(a - b) {
                out.push(a - b);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    /// N0 = (2pi)^d rho0 and the paper chemical potential; contact coefficient 1.
    Paper,
    /// N0 = lambda^{-1} sum 1/<k>^2 over the basis, theta supplied; W is the exact
    /// second quantization of D.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionParams {
    pub lambda: f64,
    pub centering: Centering,
    /// Chemical-potential coefficient multiplying -lambda (N - N0).
    pub theta: f64,
    /// Used only with paper centering.
    pub n0: f64,
}

impl InteractionParams {
    pub fn desk(lambda: f64, theta: f64) -> Self {
        InteractionParams { lambda, centering: Centering::Desk, theta, n0: f64::NAN }
    }

    pub fn paper(lambda: f64, theta_eps: f64, n0: f64) -> Self {
        InteractionParams { lambda, centering: Centering::Paper, theta: theta_eps, n0 }
    }

    pub fn n0_for(&self, basis: &FockBasis) -> f64 {
        match self.centering {
            Centering::Paper => self.n0,
            Centering::Desk => basis.modes().iter().map(|k| 1.0 / k.bracket2()).sum::<f64>() / self.lambda,
        }
    }
}

/// The renormalized interaction together with its truncation diagnostic.
#[derive(Clone, Debug)]
pub struct Interaction {
    pub op: FockOperator,
    pub n0: f64,
    /// sum of v^eps(q) over q not representable in the basis (zero mode excluded),
    /// over the box where v^eps exceeds 1e-16.
    pub dropped_vhat: f64,
}

/// lambda^2/2 sum_q v(q) |dGamma(e_q) - centering|^2 - lambda theta (N - N0).
pub fn build_w(basis: &Arc<FockBasis>, p: &Potential, params: &InteractionParams) -> Result<Interaction> {
    let lam = params.lambda;
    if !(lam > 0.0) {
        return Err(invalid("lambda must be positive"));
    }
    let d = basis.torus_dim();
    let n0 = params.n0_for(basis);
    let vol = two_pi_pow(d as f64);
    let number = number_operator(basis);
    let centered = number.shift(-n0);
    let contact = match params.centering {
        Centering::Desk => p.hat(Mode::ZERO),
        Centering::Paper => 1.0,
    };
    let mut w = centered.mul(&centered).scale(Complex64::new(0.5 * lam * lam * contact / vol, 0.0));
    let diffs = representable_differences(basis);
    for &q in diffs.iter().filter(|&&q| q != Mode::ZERO) {
        let v = p.hat(q);
        if v == 0.0 {
            continue;
        }
        let x = dgamma_plane_wave(basis, q)?;
        w = w.add(&x.adjoint().mul(&x).scale(Complex64::new(0.5 * lam * lam * v, 0.0)));
    }
    w = w.add(&centered.scale(Complex64::new(-lam * params.theta, 0.0)));
    w.hermitian = w.hermitian_deviation() <= 1e-13;
    w.number_conserving = true;
    let dropped_vhat = dropped_mass(p, d, &diffs);
    Ok(Interaction { op: w, n0, dropped_vhat })
}

fn dropped_mass(p: &Potential, d: usize, diffs: &[Mode]) -> f64 {
    let set: std::collections::HashSet<Mode> = diffs.iter().copied().collect();
    let mut r = 1;
    while p.hat(Mode::axis(0, r)) > 1e-16 && r < 64 {
        r += 1;
    }
    let mut acc = 0.0;
    crate::spectral::for_each_in_box(d, r, |q| {
        if q != Mode::ZERO && !set.contains(&q) {
            acc += p.hat(q);
        }
    });
    acc
}

/// H = lambda dGamma(<k>^2) + W.
pub fn hamiltonian(basis: &Arc<FockBasis>, p: &Potential, params: &InteractionParams) -> Result<FockOperator> {
    let w = build_w(basis, p, params)?;
    let mut h = kinetic(basis).scale(Complex64::new(params.lambda, 0.0)).add(&w.op);
    h.hermitian = true;
    h.number_conserving = true;
    Ok(h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Gibbs,
    Localized,
    Constructed,
}

#[derive(Clone, Debug)]
struct Block {
    range: Range<usize>,
    vecs: DMatrix<Complex64>,
    log_p: DVector<f64>,
    rho: DMatrix<Complex64>,
}

/// Density matrix stored blockwise through its spectral decomposition.
#[derive(Clone, Debug)]
pub struct QuantumState {
    basis: Arc<FockBasis>,
    blocks: Vec<Block>,
    block_of: Vec<u32>,
    pub number_conserving: bool,
    pub lambda: Option<f64>,
    pub log_z: Option<f64>,
    pub provenance: Provenance,
}

impl Block {
    fn from_spectrum(range: Range<usize>, vecs: DMatrix<Complex64>, log_p: DVector<f64>) -> Self {
        let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
        let mut scaled = vecs.clone();
        for (j, pj) in p.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*pj);
        }
        let rho = &scaled * vecs.adjoint();
        Block { range, vecs, log_p, rho }
    }

    fn from_density(range: Range<usize>, rho: DMatrix<Complex64>) -> Self {
        let eig = rho.clone().symmetric_eigen();
        let log_p = eig.eigenvalues.map(|x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY });
        Block { range, vecs: eig.eigenvectors, log_p, rho }
    }

    fn log_matrix(&self) -> DMatrix<Complex64> {
        let mut scaled = self.vecs.clone();
        for (j, l) in self.log_p.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*l);
        }
        &scaled * self.vecs.adjoint()
    }
}

impl QuantumState {
    fn assemble(basis: &Arc<FockBasis>, blocks: Vec<Block>, conserving: bool, provenance: Provenance) -> Self {
        let mut block_of = vec![0u32; basis.len()];
        for (b, blk) in blocks.iter().enumerate() {
            for i in blk.range.clone() {
                block_of[i] = b as u32;
            }
        }
        QuantumState { basis: basis.clone(), blocks, block_of, number_conserving: conserving, lambda: None, log_z: None, provenance }
    }

    /// From a dense density matrix; block structure over sectors is detected to 1e-14.
    pub fn from_density(basis: &Arc<FockBasis>, rho: DMatrix<Complex64>, provenance: Provenance) -> Result<Self> {
        let n = basis.len();
        if rho.nrows() != n || rho.ncols() != n {
            return Err(invalid("density matrix has the wrong size"));
        }
        let herm = (&rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > 1e-12 {
            return Err(Error::NotHermitian(herm));
        }
        let sector_of: Vec<usize> = (0..n).map(|i| basis.total(i)).collect();
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if sector_of[i] != sector_of[j] {
                    off = off.max(rho[(i, j)].norm());
                }
            }
        }
        let conserving = off <= 1e-14;
        let blocks = if conserving {
            basis.sectors().iter().map(|r| Block::from_density(r.clone(), rho.view((r.start, r.start), (r.len(), r.len())).into_owned())).collect()
        } else {
            vec![Block::from_density(0..n, rho)]
        };
        Ok(Self::assemble(basis, blocks, conserving, provenance))
    }

    /// Pure state |psi><psi| (normalized here).
    pub fn pure(basis: &Arc<FockBasis>, psi: &[Complex64]) -> Result<Self> {
        let v = DVector::from_column_slice(psi);
        let norm = v.norm();
        if norm == 0.0 {
            return Err(invalid("zero vector"));
        }
        let v = v / Complex64::new(norm, 0.0);
        Self::from_density(basis, &v * v.adjoint(), Provenance::Constructed)
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    /// <i| rho |j>.
    pub fn element(&self, i: usize, j: usize) -> Complex64 {
        let (bi, bj) = (self.block_of[i], self.block_of[j]);
        if bi != bj {
            return ZERO;
        }
        let b = &self.blocks[bi as usize];
        b.rho[(i - b.range.start, j - b.range.start)]
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.basis.len();
        let mut m = DMatrix::from_element(n, n, ZERO);
        for b in &self.blocks {
            m.view_mut((b.range.start, b.range.start), (b.range.len(), b.range.len())).copy_from(&b.rho);
        }
        m
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.log_p.iter()).map(|l| l.exp()).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.log_p.iter()).map(|l| l.exp()).fold(f64::INFINITY, f64::min).min(self.min_raw_eigenvalue())
    }

    fn min_raw_eigenvalue(&self) -> f64 {
        // negative eigenvalues are stored as log = -inf; recover them from the density
        self.blocks.iter().map(|b| b.rho.clone().symmetric_eigenvalues().min()).fold(f64::INFINITY, f64::min)
    }

    /// Tr[A rho].
    pub fn expect(&self, op: &FockOperator) -> Complex64 {
        let mut acc = ZERO;
        for i in 0..self.basis.len() {
            for (j, v) in op.row(i) {
                acc += v * self.element(j, i);
            }
        }
        acc
    }

    /// Probability of the n-particle sector.
    pub fn sector_weight(&self, n: usize) -> f64 {
        self.basis.sectors()[n].clone().map(|i| self.element(i, i).re).sum()
    }

    /// <a_k^* a_k>.
    pub fn occupation(&self, mode: usize) -> f64 {
        (0..self.basis.len()).map(|i| self.basis.occupation(i)[mode] as f64 * self.element(i, i).re).sum()
    }
}

/// Gibbs state e^{-H}/Z by per-sector eigendecomposition; diagonal H skips the solver.
pub fn gibbs(h: &FockOperator) -> Result<QuantumState> {
    let dev = h.hermitian_deviation();
    if dev > 1e-10 {
        return Err(Error::NotHermitian(dev));
    }
    let basis = h.basis().clone();
    if !h.number_conserving {
        return Err(Error::NotNumberConserving);
    }
    let diagonal = h.is_diagonal();
    let mut spectra: Vec<(Range<usize>, DMatrix<Complex64>, DVector<f64>)> = Vec::new();
    for r in basis.sectors() {
        if diagonal {
            // one 1x1 block per basis state keeps memory linear in the dimension
            for i in r.clone() {
                spectra.push((i..i + 1, DMatrix::identity(1, 1), DVector::from_element(1, h.get(i, i).re)));
            }
        } else {
            let eig = h.dense_block(r.clone()).symmetric_eigen();
            spectra.push((r.clone(), eig.eigenvectors, eig.eigenvalues));
        }
    }
    let min = spectra.iter().flat_map(|s| s.2.iter()).cloned().fold(f64::INFINITY, f64::min);
    let sum: f64 = spectra.iter().flat_map(|s| s.2.iter()).map(|e| (min - e).exp()).sum();
    let log_z = -min + sum.ln();
    let blocks = spectra.into_iter().map(|(r, v, e)| Block::from_spectrum(r, v, e.map(|x| -x - log_z))).collect();
    let mut st = QuantumState::assemble(&basis, blocks, true, Provenance::Gibbs);
    st.log_z = Some(log_z);
    Ok(st)
}

/// Gibbs state on a basis whose cap grows by 25% until the top sector carries < `tol`.
pub fn gibbs_adaptive<F>(make_h: F, d: usize, modes: &[Mode], n_start: usize, tol: f64) -> Result<(Arc<FockBasis>, QuantumState)>
where
    F: Fn(&Arc<FockBasis>) -> Result<FockOperator>,
{
    let mut n_max = n_start.max(2);
    loop {
        let basis = Arc::new(FockBasis::new(d, modes.to_vec(), n_max)?);
        let st = gibbs(&make_h(&basis)?)?;
        if st.sector_weight(n_max) < tol {
            return Ok((basis, st));
        }
        n_max = (n_max as f64 * 1.25).ceil() as usize;
    }
}

/// Tr[f(lambda N_phi) rho] and, for f = x^k, the falling-factorial form
/// lambda^k Tr[N_phi (N_phi - 1) ... (N_phi - k + 1) rho].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub falling: Option<f64>,
}

/// N_phi = a^*(phi) a(phi) for a one-body vector in mode coordinates (normalized here).
pub fn occupation_of(basis: &Arc<FockBasis>, phi: &[Complex64]) -> Result<FockOperator> {
    if phi.len() != basis.n_modes() {
        return Err(invalid("phi must have one entry per basis mode"));
    }
    let norm: f64 = phi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(invalid("phi must be nonzero"));
    }
    let v = DVector::from_iterator(phi.len(), phi.iter().map(|c| c / norm));
    dgamma(basis, &(&v * v.adjoint()))
}

/// Expectation of f(lambda N_phi) through the spectrum of N_phi in each sector.
pub fn correlation(state: &QuantumState, phi: &[Complex64], lambda: f64, f: &dyn Fn(f64) -> f64) -> Result<f64> {
    let basis = state.basis().clone();
    let nphi = occupation_of(&basis, phi)?;
    let rho = state.to_dense();
    let mut acc = 0.0;
    for r in basis.sectors() {
        let eig = nphi.dense_block(r.clone()).symmetric_eigen();
        let sub = rho.view((r.start, r.start), (r.len(), r.len()));
        for (j, &nu) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(j);
            let w = (v.adjoint() * sub * v)[(0, 0)].re;
            acc += f(lambda * nu.round()) * w;
        }
    }
    Ok(acc)
}

pub fn correlation_power(state: &QuantumState, phi: &[Complex64], lambda: f64, k: u32) -> Result<Correlation> {
    let value = correlation(state, phi, lambda, &|x| x.powi(k as i32))?;
    let falling = correlation(state, phi, 1.0, &|n| (0..k).map(|i| (n - i as f64).max(0.0)).product::<f64>() * lambda.powi(k as i32))?;
    Ok(Correlation { value, falling: Some(falling) })
}

/// Tr[G (log G - log G')], blockwise. G' must be number conserving or share G's blocks.
pub fn relative_entropy(g: &QuantumState, gp: &QuantumState) -> Result<f64> {
    if !Arc::ptr_eq(g.basis(), gp.basis()) {
        return Err(invalid("states live on different bases"));
    }
    let mut ent = 0.0;
    for b in &g.blocks {
        for &l in b.log_p.iter() {
            if l.is_finite() {
                ent += l.exp() * l;
            }
        }
    }
    let mut cross = 0.0;
    for b in &gp.blocks {
        let lg = b.log_matrix();
        for i in b.range.clone() {
            for j in b.range.clone() {
                let x = lg[(j - b.range.start, i - b.range.start)];
                let e = g.element(i, j);
                if e != ZERO {
                    if !x.re.is_finite() {
                        return Ok(f64::INFINITY);
                    }
                    cross += (e * x).re;
                }
            }
        }
    }
    Ok(ent - cross)
}

/// H(G, G0) + Tr[W G] + log(Z_lambda / Z_0); zero exactly at the interacting Gibbs state.
pub fn variational_gap(test: &QuantumState, g0: &QuantumState, w: &FockOperator, log_z_lambda: f64, log_z0: f64) -> Result<f64> {
    Ok(relative_entropy(test, g0)? + test.expect(w).re + log_z_lambda - log_z0)
}

/// Random full-rank density matrix G G^* / Tr with complex Gaussian G (Wishart type).
pub fn random_density<R: rand::Rng>(basis: &Arc<FockBasis>, rng: &mut R, number_conserving: bool) -> Result<QuantumState> {
    let n = basis.len();
    let g = DMatrix::from_fn(n, n, |_, _| crate::rng::complex_normal(rng, 1.0));
    let mut rho = &g * g.adjoint();
    if number_conserving {
        for i in 0..n {
            for j in 0..n {
                if basis.total(i) != basis.total(j) {
                    rho[(i, j)] = ZERO;
                }
            }
        }
    }
    let tr: Complex64 = rho.trace();
    rho /= tr;
    rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    QuantumState::from_density(basis, rho, Provenance::Constructed)
}
