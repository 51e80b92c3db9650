//! Coherent states, lower symbols and the moment identities linking a bosonic state to
//! its de Finetti measure at scale lambda.
//!
//! Conventions: the lower symbol of G on the span of a mode subset P is
//! (pi lambda)^{-|P|} <W(u / sqrt lambda), G_P W(u / sqrt lambda)> du, and the k-th reduced
//! density matrix satisfies k! Tr G^(k) = Tr[N (N-1) ... (N-k+1) G]. Operators on the
//! k-fold tensor power of C^|P| are indexed by ordered tuples (i_1, ..., i_k), first
//! index most significant.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fock::{binomial, dgamma, ladder, number_operator, FockBasis, FockOperator, Ladder, Provenance, QuantumState};
use crate::quad;
use crate::spectral::{EnergyKernel, Mode};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

/// Partial trace of `state` onto the modes `keep` (same occupation cap).
pub fn localize(state: &QuantumState, keep: &[Mode]) -> Result<QuantumState> {
    let basis = state.basis();
    let pos: Vec<usize> = keep.iter().map(|&k| basis.mode_index(k)).collect::<Result<_>>()?;
    let sub = Arc::new(FockBasis::new(basis.torus_dim(), keep.to_vec(), basis.n_max())?);
    let rest: Vec<usize> = (0..basis.n_modes()).filter(|m| !pos.contains(m)).collect();
    // group full-basis states by their complement occupation; ordered so sums are reproducible
    let mut groups: std::collections::BTreeMap<Vec<u16>, Vec<(usize, usize)>> = std::collections::BTreeMap::new();
    for i in 0..basis.len() {
        let occ = basis.occupation(i);
        let kept: Vec<u16> = pos.iter().map(|&m| occ[m]).collect();
        let comp: Vec<u16> = rest.iter().map(|&m| occ[m]).collect();
        let j = sub.index_of(&kept).expect("kept occupation fits the cap");
        groups.entry(comp).or_default().push((i, j));
    }
    let mut rho = DMatrix::from_element(sub.len(), sub.len(), ZERO);
    for members in groups.values() {
        for &(i, a) in members {
            for &(j, b) in members {
                rho[(a, b)] += state.element(i, j);
            }
        }
    }
    let rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    QuantumState::from_density(&sub, rho, Provenance::Localized)
}

/// Unitary one-body reflection R (Hermitian) with R e_0 proportional to phi.
fn reflection_to(phi: &DVector<Complex64>) -> Option<DMatrix<Complex64>> {
    let m = phi.len();
    let p0 = phi[0];
    let phase = if p0.norm() > 0.0 { p0 / p0.norm() } else { Complex64::new(1.0, 0.0) };
    let mut w = phi.clone();
    w[0] -= phase;
    let n2 = w.norm_squared();
    if n2 < 1e-28 {
        return None;
    }
    Some(DMatrix::identity(m, m) - (&w * w.adjoint()) * Complex64::new(2.0 / n2, 0.0))
}

/// Second quantization of a one-body Householder reflection I - 2 w w^* / |w|^2:
/// (-1)^{dGamma(w w^* / |w|^2)}, assembled from the integer spectrum sector by sector.
fn fock_reflection(basis: &Arc<FockBasis>, r: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let m = r.nrows();
    let proj = (DMatrix::identity(m, m) - r) * Complex64::new(0.5, 0.0);
    let count = dgamma(basis, &proj)?;
    let mut out = DMatrix::from_element(basis.len(), basis.len(), ZERO);
    for s in basis.sectors() {
        let eig = count.dense_block(s.clone()).symmetric_eigen();
        for (j, &nu) in eig.eigenvalues.iter().enumerate() {
            let sign = if (nu.round() as i64) % 2 == 0 { 1.0 } else { -1.0 };
            let v = eig.eigenvectors.column(j);
            let blk = &v * v.adjoint() * Complex64::new(sign, 0.0);
            let mut view = out.view_mut((s.start, s.start), (s.len(), s.len()));
            view += blk;
        }
    }
    Ok(out)
}

/// Localization onto the line C phi: rotate the one-body basis so phi becomes the first
/// mode, then trace out the rest. Returns a one-mode state.
pub fn localize_line(state: &QuantumState, phi: &[Complex64]) -> Result<QuantumState> {
    let basis = state.basis();
    if phi.len() != basis.n_modes() {
        return Err(invalid("phi must have one entry per basis mode"));
    }
    let v = DVector::from_column_slice(phi);
    let norm = v.norm();
    if norm == 0.0 {
        return Err(invalid("phi must be nonzero"));
    }
    let v = v / Complex64::new(norm, 0.0);
    let rotated = match reflection_to(&v) {
        None => state.clone(),
        Some(r) => {
            let u = fock_reflection(basis, &r)?;
            let rho = &u * state.to_dense() * &u;
            let rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
            QuantumState::from_density(basis, rho, Provenance::Constructed)?
        }
    };
    localize(&rotated, &basis.modes()[..1])
}

/// Truncated coherent vector W(u) = e^{-|u|^2/2} sum_n u^{(x)n} / sqrt(n!) in the occupation basis,
/// with the norm mass lost above the cap.
#[derive(Clone, Debug)]
pub struct CoherentVector {
    pub amplitudes: Vec<Complex64>,
    pub dropped_mass: f64,
}

pub fn coherent_vector(u: &[Complex64], basis: &FockBasis) -> Result<CoherentVector> {
    if u.len() != basis.n_modes() {
        return Err(invalid("u must have one entry per basis mode"));
    }
    let norm2: f64 = u.iter().map(|z| z.norm_sqr()).sum();
    let mut amps = Vec::with_capacity(basis.len());
    for i in 0..basis.len() {
        // log-modulus and phase separately: z^n / sqrt(n!) overflows long before it is small
        let mut log_mod = -0.5 * norm2;
        let mut phase = Complex64::new(1.0, 0.0);
        for (z, &n) in u.iter().zip(basis.occupation(i)) {
            if n > 0 {
                let r = z.norm();
                if r == 0.0 {
                    log_mod = f64::NEG_INFINITY;
                    break;
                }
                log_mod += n as f64 * r.ln() - 0.5 * ln_factorial(n as usize);
                phase *= (z / r).powu(n as u32);
            }
        }
        amps.push(phase * log_mod.exp());
    }
    let kept: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    Ok(CoherentVector { amplitudes: amps, dropped_mass: (1.0 - kept).max(0.0) })
}

/// Lower symbol of a state localized on its own basis modes.
#[derive(Clone, Debug)]
pub struct LowerSymbol {
    state: QuantumState,
    pub lambda: f64,
}

impl LowerSymbol {
    pub fn new(state: &QuantumState, modes: &[Mode], lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(invalid("lambda must be positive"));
        }
        let local = if modes == state.basis().modes() { state.clone() } else { localize(state, modes)? };
        Ok(LowerSymbol { state: local, lambda })
    }

    pub fn state(&self) -> &QuantumState {
        &self.state
    }

    pub fn n_modes(&self) -> usize {
        self.state.basis().n_modes()
    }

    /// Density with respect to Lebesgue measure on C^|P|. The localized state lives inside
    /// the cap, so truncating W loses nothing here.
    pub fn density(&self, u: &[Complex64]) -> Result<f64> {
        let s = 1.0 / self.lambda.sqrt();
        let scaled: Vec<Complex64> = u.iter().map(|z| z * s).collect();
        let w = coherent_vector(&scaled, self.state.basis())?.amplitudes;
        let n = w.len();
        let mut acc = ZERO;
        for i in 0..n {
            if w[i] == ZERO {
                continue;
            }
            let mut row = ZERO;
            for j in 0..n {
                row += self.state.element(i, j) * w[j];
            }
            acc += w[i].conj() * row;
        }
        Ok(acc.re / (std::f64::consts::PI * self.lambda).powi(self.n_modes() as i32))
    }

    /// Integrate g(u) against the symbol with a tensor rule: per complex mode, Gauss-Laguerre
    /// in |u|^2 / lambda and a uniform angle grid. Exact for polynomial g of degree below
    /// the rule order, since the density is e^{-|u|^2/lambda} times a polynomial.
    pub fn integrate<G: FnMut(&[Complex64]) -> Complex64>(&self, radial: usize, angular: usize, mut g: G) -> Result<Complex64> {
        let m = self.n_modes();
        if m > 2 {
            return Err(Error::Unsupported("lower-symbol quadrature beyond two modes".into()));
        }
        let rule = quad::gauss_laguerre(radial, 0.0);
        // int_C F(z) d^2z = (lambda / 2) int_0^inf dt int_0^2pi dphi F(sqrt(lambda t) e^{i phi});
        // undo the e^{-t} weight because the density already carries it
        let nodes: Vec<(Complex64, f64)> = rule
            .iter()
            .flat_map(|&(t, w)| {
                (0..angular).map(move |a| {
                    let phi = std::f64::consts::TAU * a as f64 / angular as f64;
                    (Complex64::from_polar((self.lambda * t).sqrt(), phi), w * t.exp() * 0.5 * self.lambda * std::f64::consts::TAU / angular as f64)
                })
            })
            .collect();
        let mut acc = ZERO;
        let mut u = vec![ZERO; m];
        let mut idx = vec![0usize; m];
        loop {
            let mut w = 1.0;
            for (c, &i) in idx.iter().enumerate() {
                u[c] = nodes[i].0;
                w *= nodes[i].1;
            }
            acc += g(&u) * (w * self.density(&u)?);
            let mut c = 0;
            loop {
                if c == m {
                    return Ok(acc);
                }
                idx[c] += 1;
                if idx[c] < nodes.len() {
                    break;
                }
                idx[c] = 0;
                c += 1;
            }
        }
    }
}

/// All ordered k-tuples over m indices, first index most significant.
fn tuples(m: usize, k: usize) -> Vec<Vec<usize>> {
    let total = m.pow(k as u32);
    (0..total)
        .map(|mut x| {
            let mut t = vec![0; k];
            for slot in (0..k).rev() {
                t[slot] = x % m;
                x /= m;
            }
            t
        })
        .collect()
}

fn tuple_index(t: &[usize], m: usize) -> usize {
    t.iter().fold(0, |acc, &i| acc * m + i)
}

/// k-th reduced density matrix on ordered tuples:
/// <i_1..i_k| G^(k) |j_1..j_k> = Tr[a*_{j_1}..a*_{j_k} a_{i_k}..a_{i_1} G] / k!.
pub fn reduced_density(state: &QuantumState, k: usize) -> Result<DMatrix<Complex64>> {
    let basis = state.basis();
    let m = basis.n_modes();
    if k == 0 {
        return Ok(DMatrix::from_element(1, 1, Complex64::new(state.trace(), 0.0)));
    }
    if k > basis.n_max() {
        return Err(Error::OrderTooHigh { k, need: k, have: basis.n_max() });
    }
    let ann: Vec<FockOperator> = basis.modes().iter().map(|&q| ladder(basis, q, Ladder::Annihilate)).collect::<Result<_>>()?;
    let tups = tuples(m, k);
    // A_I = a_{i_k} ... a_{i_1}; then entry = Tr[A_J^* A_I G]
    let products: Vec<FockOperator> = tups
        .iter()
        .map(|t| {
            let mut op = ann[t[0]].clone();
            for &i in &t[1..] {
                op = ann[i].mul(&op);
            }
            op
        })
        .collect();
    let rho = state.to_dense();
    let vecs: Vec<DMatrix<Complex64>> = products.iter().map(|a| a.to_dense()).collect();
    let scale = (-ln_factorial(k)).exp();
    let n = tups.len();
    let mut out = DMatrix::from_element(n, n, ZERO);
    for (ii, ai) in vecs.iter().enumerate() {
        let ai_rho = ai * &rho;
        for (jj, aj) in vecs.iter().enumerate() {
            // Tr[A_J^* A_I rho] = sum (A_J)^*_{..} ...
            let tr: Complex64 = aj.iter().zip(ai_rho.iter()).map(|(x, y)| x.conj() * y).sum();
            out[(ii, jj)] = tr * scale;
        }
    }
    Ok(out)
}

/// Symmetrizer on the k-fold tensor power of C^m.
pub fn symmetrizer(m: usize, k: usize) -> DMatrix<Complex64> {
    let tups = tuples(m, k);
    let n = tups.len();
    let perms = permutations(k);
    let mut out = DMatrix::from_element(n, n, ZERO);
    let w = Complex64::new(1.0 / perms.len() as f64, 0.0);
    for (r, t) in tups.iter().enumerate() {
        for p in &perms {
            let s: Vec<usize> = p.iter().map(|&i| t[i]).collect();
            out[(r, tuple_index(&s, m))] += w;
        }
    }
    out
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..k {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a.kronecker(b)
}

/// Right-hand side of the de Finetti moment identity together with its companion bound.
#[derive(Clone, Debug)]
pub struct DeFinettiMoment {
    /// int |u^(x)k><u^(x)k| dmu, from reduced density matrices only.
    pub moment: DMatrix<Complex64>,
    /// k! lambda^k G_P^(k).
    pub leading: DMatrix<Complex64>,
    /// Trace norm of moment - leading.
    pub remainder_trace_norm: f64,
    /// lambda^k sum_{l<k} C(k,l)^2 (k-l+d-1)!/(d-1)! Tr[N^l G_P].
    pub bound: f64,
}

/// Moment of the lower symbol of `state` localized to `modes`, assembled algebraically as
/// k! lambda^k sum_{l<=k} C(k,l) G_P^(l) (x)_s 1.
pub fn definetti_moment(state: &QuantumState, modes: &[Mode], lambda: f64, k: usize) -> Result<DeFinettiMoment> {
    let local = if modes == state.basis().modes() { state.clone() } else { localize(state, modes)? };
    let basis = local.basis().clone();
    let m = basis.n_modes();
    if k > basis.n_max() {
        return Err(Error::OrderTooHigh { k, need: k, have: basis.n_max() });
    }
    let pk = lambda.powi(k as i32) * (ln_factorial(k)).exp();
    let sym = symmetrizer(m, k);
    let mut moment = DMatrix::from_element(m.pow(k as u32), m.pow(k as u32), ZERO);
    let mut leading = moment.clone();
    for l in 0..=k {
        let g = reduced_density(&local, l)?;
        let ident = DMatrix::<Complex64>::identity(m.pow((k - l) as u32), m.pow((k - l) as u32));
        let term = &sym * kron(&g, &ident) * &sym * Complex64::new(pk * binomial(k, l), 0.0);
        if l == k {
            leading = term.clone();
        }
        moment += term;
    }
    let diff = &moment - &leading;
    let diff = (&diff + diff.adjoint()) * Complex64::new(0.5, 0.0);
    let remainder_trace_norm = diff.symmetric_eigenvalues().iter().map(|x| x.abs()).sum();
    let number = number_operator(&basis);
    let mut bound = 0.0;
    let mut power = FockOperator::identity(&basis);
    for l in 0..k {
        let tr = local.expect(&power).re;
        let falling = (ln_factorial(k - l + m - 1) - ln_factorial(m - 1)).exp();
        bound += binomial(k, l).powi(2) * falling * tr;
        power = power.mul(&number);
    }
    Ok(DeFinettiMoment { moment, leading, remainder_trace_norm, bound: bound * lambda.powi(k as i32) })
}

/// Independent route to the same moment: anti-normal ordering,
/// <i..|int u^(x)k u^(x)k* dmu|j..> = lambda^k Tr[a_{i_1}..a_{i_k} a*_{j_1}..a*_{j_k} G_P].
/// The state is embedded in a basis with cap raised by k so no creation is dropped.
pub fn antinormal_moment(state: &QuantumState, lambda: f64, k: usize) -> Result<DMatrix<Complex64>> {
    let small = state.basis();
    let big = Arc::new(FockBasis::new(small.torus_dim(), small.modes().to_vec(), small.n_max() + k)?);
    let mut rho = DMatrix::from_element(big.len(), big.len(), ZERO);
    for i in 0..small.len() {
        for j in 0..small.len() {
            rho[(i, j)] = state.element(i, j);
        }
    }
    let m = big.n_modes();
    let cre: Vec<FockOperator> = big.modes().iter().map(|&q| ladder(&big, q, Ladder::Create)).collect::<Result<_>>()?;
    let tups = tuples(m, k);
    // C_J = a*_{j_1} .. a*_{j_k}; entry = Tr[C_I^* C_J rho] = sum over (C_I)^* . (C_J rho)
    let dense: Vec<DMatrix<Complex64>> = tups
        .iter()
        .map(|t| {
            let mut op = cre[t[k - 1]].clone();
            for &i in t[..k - 1].iter().rev() {
                op = cre[i].mul(&op);
            }
            op.to_dense()
        })
        .collect();
    let n = tups.len();
    let mut out = DMatrix::from_element(n, n, ZERO);
    let scale = lambda.powi(k as i32);
    for (jj, cj) in dense.iter().enumerate() {
        let cj_rho = cj * &rho;
        for (ii, ci) in dense.iter().enumerate() {
            let tr: Complex64 = ci.iter().zip(cj_rho.iter()).map(|(x, y)| x.conj() * y).sum();
            out[(ii, jj)] = tr * scale;
        }
    }
    Ok(out)
}

/// Observable for the one-line moment formula.
pub enum LineObservable<'a> {
    Power(u32),
    Function(&'a dyn Fn(f64) -> f64),
}

/// Occupation distribution of the line C phi under the localized state.
pub fn line_weights(state: &QuantumState, phi: &[Complex64]) -> Result<Vec<f64>> {
    if !state.number_conserving {
        return Err(Error::NotNumberConserving);
    }
    let line = localize_line(state, phi)?;
    Ok((0..line.basis().len()).map(|n| line.element(n, n).re).collect())
}

/// int f(|<phi, u>|^2) dmu = sum_n p_n int_0^inf f(lambda x) e^{-x} x^n / n! dx.
pub fn poisson_moments(state: &QuantumState, phi: &[Complex64], lambda: f64, f: LineObservable) -> Result<f64> {
    let p = line_weights(state, phi)?;
    let mut acc = 0.0;
    for (n, &pn) in p.iter().enumerate() {
        if pn == 0.0 {
            continue;
        }
        let w = match f {
            LineObservable::Power(k) => lambda.powi(k as i32) * (ln_factorial(n + k as usize) - ln_factorial(n)).exp(),
            LineObservable::Function(g) => {
                let lnf = ln_factorial(n);
                quad::integrate_to_infinity(|x| if x == 0.0 && n > 0 { 0.0 } else { g(lambda * x) * (-x + n as f64 * x.ln() - lnf).exp() }, 0.0, 1e-12)?.value
            }
        };
        acc += pn * w;
    }
    Ok(acc)
}

/// <W(u/sqrt lambda), W W(u/sqrt lambda)> for an interaction operator, with the classical
/// energy D[u] when the kernel's lattice matches the basis.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CoherentEnergy {
    pub quantum: f64,
    pub classical: f64,
    pub gap: f64,
    pub dropped_mass: f64,
}

pub fn coherent_expectation_w(u: &[Complex64], w: &FockOperator, lambda: f64, kernel: &EnergyKernel) -> Result<CoherentEnergy> {
    let basis = w.basis();
    let lat = kernel.lattice();
    if lat.modes() != basis.modes() {
        return Err(invalid("basis modes must match the classical lattice in order"));
    }
    let s = 1.0 / lambda.sqrt();
    let scaled: Vec<Complex64> = u.iter().map(|z| z * s).collect();
    let cv = coherent_vector(&scaled, basis)?;
    let wv = w.apply(&cv.amplitudes);
    let quantum: f64 = cv.amplitudes.iter().zip(&wv).map(|(a, b)| (a.conj() * b).re).sum();
    let mut scratch = vec![ZERO; kernel.n_differences()];
    let classical = kernel.energy_d(u, &mut scratch);
    Ok(CoherentEnergy { quantum, classical, gap: quantum - classical, dropped_mass: cv.dropped_mass })
}

/// Closed-form comparison of the free lower symbol with the Gaussian free field on P.
#[derive(Clone, Debug, Serialize)]
pub struct SymbolBoundReport {
    pub lambda: f64,
    /// Smallest C with ratio <= e^{C lambda N^4 |u|^2} over the probe grid.
    pub c_fit: f64,
    /// Supremum of the same constant over all u.
    pub c_sup: f64,
    pub ratio_at_zero: f64,
    /// Per-mode variance lambda / (1 - e^{-lambda mu_j}) against the free 1/mu_j.
    pub variances: Vec<(f64, f64)>,
}

/// Log of the free lower symbol per complex mode: (lambda pi)^{-1}(1-e^{-lambda mu}) exp(-|a|^2 (1-e^{-lambda mu}) / lambda).
pub fn free_symbol_log_density(lambda: f64, mu: f64, a2: f64) -> f64 {
    let g = -(-lambda * mu).exp_m1();
    (g / (lambda * std::f64::consts::PI)).ln() - a2 * g / lambda
}

pub fn gaussian_symbol_bound_check(lambda: f64, eigenvalues: &[f64], cutoff: usize, radii: &[f64]) -> Result<SymbolBoundReport> {
    if !(lambda > 0.0) || eigenvalues.is_empty() {
        return Err(invalid("need lambda > 0 and at least one mode"));
    }
    let n4 = (cutoff.max(1) as f64).powi(4);
    let ln_ratio_zero: f64 = eigenvalues.iter().map(|&mu| free_symbol_log_density(lambda, mu, 0.0) - (mu / std::f64::consts::PI).ln()).sum();
    let slope = |mu: f64| mu + (-lambda * mu).exp_m1() / lambda;
    let c_sup = eigenvalues.iter().map(|&mu| slope(mu)).fold(0.0, f64::max) / (lambda * n4);
    let mut c_fit: f64 = 0.0;
    for &r in radii {
        if r <= 0.0 {
            continue;
        }
        for (j, _) in eigenvalues.iter().enumerate() {
            // all mass on mode j: the worst direction is the largest slope
            let mut ln_ratio = 0.0;
            for (i, &mu) in eigenvalues.iter().enumerate() {
                let a2 = if i == j { r * r } else { 0.0 };
                ln_ratio += free_symbol_log_density(lambda, mu, a2) - ((mu / std::f64::consts::PI).ln() - mu * a2);
            }
            c_fit = c_fit.max(ln_ratio / (lambda * n4 * r * r));
        }
    }
    let variances = eigenvalues.iter().map(|&mu| (lambda / -(-lambda * mu).exp_m1(), 1.0 / mu)).collect();
    Ok(SymbolBoundReport { lambda, c_fit, c_sup, ratio_at_zero: ln_ratio_zero.exp(), variances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{gibbs, kinetic, random_density};
    use crate::rng::stream;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn basis(modes: &[i32], n_max: usize) -> Arc<FockBasis> {
        Arc::new(FockBasis::new(1, modes.iter().map(|&k| Mode::new(&[k])).collect(), n_max).unwrap())
    }

    fn max_abs(m: &DMatrix<Complex64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn localize_cases() {
        let b = basis(&[0, 1], 6);
        let mut rng = stream(3, 0);
        let st = random_density(&b, &mut rng, true).unwrap();
        let same = localize(&st, b.modes()).unwrap();
        assert!(max_abs(&(same.to_dense() - st.to_dense())) < 1e-14);
        let l0 = localize(&st, &[Mode::new(&[0])]).unwrap();
        assert!((l0.trace() - 1.0).abs() < 1e-12);
        assert!(l0.number_conserving);
        assert!((l0.occupation(0) - st.occupation(0)).abs() < 1e-12);
        // free Gibbs state is a product over modes; its marginal is the one-mode thermal state
        // restricted by the joint cap, so compare at a cap where truncation is invisible
        let big = basis(&[0, 1], 80);
        let g = gibbs(&kinetic(&big).scale(c(0.7))).unwrap();
        let g0 = localize(&g, &[Mode::new(&[1])]).unwrap();
        let q: f64 = (-0.7f64 * 2.0).exp();
        for n in 0..10 {
            assert!((g0.element(n, n).re - (1.0 - q) * q.powi(n as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn coherent_cases() {
        let b = basis(&[0, 1], 30);
        let vac = coherent_vector(&[c(0.0), c(0.0)], &b).unwrap();
        assert_eq!(vac.amplitudes[0], c(1.0));
        assert!(vac.amplitudes[1..].iter().all(|a| *a == ZERO));
        let u = [Complex64::new(0.7, -0.4), Complex64::new(0.2, 0.9)];
        let w = coherent_vector(&u, &b).unwrap();
        let kept: f64 = w.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        assert!((kept + w.dropped_mass - 1.0).abs() < 1e-14);
        // a_k W(u) = u_k W(u) on sectors below the cap
        for (m, &uk) in u.iter().enumerate() {
            let a = ladder(&b, b.modes()[m], Ladder::Annihilate).unwrap();
            let aw = a.apply(&w.amplitudes);
            for i in 0..b.len() {
                if b.total(i) < b.n_max() {
                    assert!((aw[i] - uk * w.amplitudes[i]).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn reduced_density_trace() {
        let b = basis(&[0, 1], 6);
        let mut rng = stream(8, 0);
        let st = random_density(&b, &mut rng, true).unwrap();
        let n = number_operator(&b);
        let n2 = n.mul(&n);
        let g1 = reduced_density(&st, 1).unwrap();
        let g2 = reduced_density(&st, 2).unwrap();
        assert!((g1.trace().re - st.expect(&n).re).abs() < 1e-12);
        assert!((2.0 * g2.trace().re - (st.expect(&n2).re - st.expect(&n).re)).abs() < 1e-12);
        // supported on the symmetric subspace
        let s = symmetrizer(2, 2);
        assert!(max_abs(&(&s * &g2 * &s - &g2)) < 1e-13);
    }

    #[test]
    fn moment_identity_vacuum_and_thermal() {
        let b = basis(&[0, 1], 4);
        let mut e = vec![ZERO; b.len()];
        e[0] = c(1.0);
        let vac = QuantumState::pure(&b, &e).unwrap();
        let lam = 0.3;
        let m1 = definetti_moment(&vac, b.modes(), lam, 1).unwrap();
        assert!(max_abs(&(m1.moment - DMatrix::identity(2, 2) * c(lam))) < 1e-15);
        let one = basis(&[0], 200);
        let beta: f64 = 0.4;
        let g = gibbs(&kinetic(&one).scale(c(beta))).unwrap();
        let q = (-beta).exp();
        let nbar = q / (1.0 - q);
        let m = definetti_moment(&g, one.modes(), lam, 1).unwrap();
        assert!((m.moment[(0, 0)].re - lam * (nbar + 1.0)).abs() < 1e-10);
        let p1 = poisson_moments(&g, &[c(1.0)], lam, LineObservable::Power(1)).unwrap();
        assert!((p1 - lam / (1.0 - q)).abs() < 1e-10);
        let p2 = poisson_moments(&g, &[c(1.0)], lam, LineObservable::Power(2)).unwrap();
        assert!((p2 - 2.0 * lam * lam / (1.0 - q).powi(2)).abs() < 1e-10);
        let m2 = definetti_moment(&g, one.modes(), lam, 2).unwrap();
        assert!((m2.moment[(0, 0)].re - p2).abs() < 1e-10);
        let p0 = poisson_moments(&g, &[c(1.0)], lam, LineObservable::Function(&|_| 1.0)).unwrap();
        assert!((p0 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn moment_identity_random_states() {
        let b = basis(&[0, 1], 8);
        let mut rng = stream(21, 0);
        for _ in 0..3 {
            let st = random_density(&b, &mut rng, true).unwrap();
            for k in 1..=3 {
                let alg = definetti_moment(&st, b.modes(), 0.2, k).unwrap();
                let anti = antinormal_moment(&st, 0.2, k).unwrap();
                assert!(max_abs(&(&alg.moment - &anti)) < 1e-12, "k={k}");
                assert!(alg.remainder_trace_norm <= alg.bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn quadrature_matches_identity() {
        let b = basis(&[0, 1], 8);
        let mut rng = stream(4, 0);
        let st = random_density(&b, &mut rng, true).unwrap();
        let lam = 0.25;
        let sym = LowerSymbol::new(&st, b.modes(), lam).unwrap();
        let norm = sym.integrate(12, 24, |_| c(1.0)).unwrap();
        assert!((norm.re - 1.0).abs() < 1e-10);
        let alg = definetti_moment(&st, b.modes(), lam, 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let q = sym.integrate(12, 24, |u| u[i] * u[j].conj()).unwrap();
                assert!((q - alg.moment[(i, j)]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn rotated_line_matches_number_spectrum() {
        let b = basis(&[0, 1], 6);
        let mut rng = stream(9, 0);
        let st = random_density(&b, &mut rng, true).unwrap();
        let phi = [Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)];
        let lam = 0.3;
        // the Poisson formula with f = x equals lambda (<N_phi> + 1)
        let nphi = crate::fock::occupation_of(&b, &phi).unwrap();
        let p1 = poisson_moments(&st, &phi, lam, LineObservable::Power(1)).unwrap();
        assert!((p1 - lam * (st.expect(&nphi).re + 1.0)).abs() < 1e-12);
        let w = line_weights(&st, &phi).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x > -1e-13));
        // diagonal slice of the k=2 moment along phi
        let m2 = definetti_moment(&st, b.modes(), lam, 2).unwrap();
        let v: Vec<Complex64> = tuples(2, 2).iter().map(|t| phi[t[0]] * phi[t[1]]).collect();
        let v = DVector::from_vec(v);
        let slice = (v.adjoint() * &m2.moment * &v)[(0, 0)].re;
        let p2 = poisson_moments(&st, &phi, lam, LineObservable::Power(2)).unwrap();
        assert!((slice - p2).abs() < 1e-12);
    }

    #[test]
    fn free_symbol_report() {
        let mus = [1.0, 2.0, 5.0];
        let r = gaussian_symbol_bound_check(0.05, &mus, 2, &[0.5, 1.0, 2.0]).unwrap();
        assert!(r.ratio_at_zero <= 1.0);
        let closed: f64 = mus.iter().map(|&m| -(-0.05f64 * m).exp_m1() / (0.05 * m)).product();
        assert!((r.ratio_at_zero - closed).abs() < 1e-14);
        assert!(r.c_fit <= r.c_sup + 1e-15);
        for (v, free) in &r.variances {
            assert!(v > free && (v - free) < 0.05 * 1.0);
        }
        let half = gaussian_symbol_bound_check(0.025, &mus, 2, &[0.5, 1.0, 2.0]).unwrap();
        assert!((half.c_sup / r.c_sup - 1.0).abs() < 0.1);
    }
}
