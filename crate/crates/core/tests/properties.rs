use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use phi4lab::counterterms::{a_eps_with_tol, b_eps_components};
use phi4lab::definetti::{antinormal_moment, definetti_moment, LowerSymbol};
use phi4lab::fock::{self, dgamma, gibbs, gibbs_adaptive, kinetic, number_operator, random_density, FockBasis, InteractionParams};
use phi4lab::rng::{complex_normal, stream};
use phi4lab::spectral::{energy_v, wick_coeffs, CutoffKind, InteractionSpec, Mode, ModeLattice, Potential, SpectralField};
use phi4lab::Complex64;
use proptest::prelude::*;

fn random_field(lattice: &Arc<ModeLattice>, seed: u64, scale: f64) -> SpectralField {
    let mut rng = stream(seed, 0);
    let coeffs = (0..lattice.len()).map(|_| complex_normal(&mut rng, scale)).collect();
    SpectralField::new(lattice.clone(), coeffs).unwrap()
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wick_coefficients_are_hermitian(seed in any::<u64>(), d in 1usize..=2, n in 1usize..=3, theta in -1.0..1.0f64) {
        let lat = Arc::new(ModeLattice::build(d, n, CutoffKind::Sharp).unwrap());
        let u = random_field(&lat, seed, 1.0);
        let w = wick_coeffs(&u, &InteractionSpec::desk(lat.clone(), theta)).unwrap();
        for &q in w.differences() {
            let neg = Mode([-q.0[0], -q.0[1], -q.0[2]]);
            prop_assert!((w.get(q) - w.get(neg).conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn interaction_energy_dominates_zero_mode(seed in any::<u64>(), d in 1usize..=2, n in 1usize..=3, eps in 0.05..1.0f64, scale in 0.01..10.0f64) {
        let lat = Arc::new(ModeLattice::build(d, n, CutoffKind::Sharp).unwrap());
        let p = Potential::gaussian(1.0, eps).unwrap();
        let u = random_field(&lat, seed, scale);
        let v = energy_v(&u, &p);
        let floor = p.hat(Mode::ZERO) * u.norm2().powi(2) / (2.0 * PI).powi(d as i32);
        prop_assert!(v >= floor * (1.0 - 1e-12), "V = {v}, floor = {floor}");
    }

    #[test]
    fn quadratic_counterterm_recombines(eps in 0.1..1.0f64, k_sum in 2usize..=6) {
        let b = b_eps_components(&Potential::gaussian(1.0, eps).unwrap(), 3, k_sum).unwrap();
        prop_assert!(b.residual().abs() <= 1e-14 * b.six_b.abs().max(1.0));
    }

    #[test]
    fn wick_sum_moves_less_than_its_tail(eps in 0.05..1.0f64, k_sum in 2usize..=20) {
        let p = Potential::gaussian(1.0, eps).unwrap();
        let coarse = a_eps_with_tol(&p, 3, k_sum, f64::INFINITY).unwrap();
        let fine = a_eps_with_tol(&p, 3, 2 * k_sum, f64::INFINITY).unwrap();
        prop_assert!((fine.value - coarse.value).abs() <= coarse.tail + 1e-15 * coarse.value);
    }

    #[test]
    fn free_occupation_within_half_lambda(lambda in 0.02..0.5f64, k in -3i32..=3) {
        let mode = Mode::new(&[k]);
        let mu = mode.bracket2();
        let (_, st) = gibbs_adaptive(|b| Ok(kinetic(b).scale(Complex64::new(lambda, 0.0))), 1, &[mode], (20.0 / (lambda * mu)).ceil() as usize, 1e-10).unwrap();
        let dev = (lambda * st.occupation(0) - 1.0 / mu).abs();
        prop_assert!(dev <= lambda / 2.0, "deviation {dev} at lambda {lambda}");
    }

    #[test]
    fn hamiltonian_conserves_particle_number(lambda in 0.05..1.0f64, theta in -1.0..1.0f64, eps in 0.1..1.0f64, n_max in 2usize..=6) {
        let basis = Arc::new(FockBasis::new(1, vec![Mode::ZERO, Mode::new(&[1]), Mode::new(&[-1])], n_max).unwrap());
        let h = fock::hamiltonian(&basis, &Potential::gaussian(1.0, eps).unwrap(), &InteractionParams::desk(lambda, theta)).unwrap();
        prop_assert_eq!(h.commutator(&number_operator(&basis)).max_abs(), 0.0);
        prop_assert!(h.hermitian_deviation() < 1e-12);
        let g = gibbs(&h).unwrap();
        prop_assert!((g.trace() - 1.0).abs() < 1e-12);
        prop_assert!(g.min_eigenvalue() > -1e-12);
    }

    #[test]
    fn second_quantized_one_body_is_hermitian_and_conserving(seed in any::<u64>(), n_max in 1usize..=5) {
        let basis = Arc::new(FockBasis::new(1, vec![Mode::ZERO, Mode::new(&[1])], n_max).unwrap());
        let mut rng = stream(seed, 1);
        let a = DMatrix::from_fn(2, 2, |_, _| complex_normal(&mut rng, 1.0));
        let h = &a + a.adjoint();
        let op = dgamma(&basis, &h).unwrap();
        prop_assert!(op.hermitian_deviation() < 1e-12);
        prop_assert!(op.commutator(&number_operator(&basis)).max_abs() < 1e-12);
    }

    #[test]
    fn moment_identity_on_random_states(seed in any::<u64>(), k in 1usize..=2, lambda in 0.05..1.0f64) {
        let basis = Arc::new(FockBasis::new(1, vec![Mode::ZERO, Mode::new(&[1])], 5).unwrap());
        let st = random_density(&basis, &mut stream(seed, 2), true).unwrap();
        let alg = definetti_moment(&st, basis.modes(), lambda, k).unwrap();
        let anti = antinormal_moment(&st, lambda, k).unwrap();
        prop_assert!(max_abs(&(&alg.moment - &anti)) < 1e-10);
        prop_assert!(alg.remainder_trace_norm <= alg.bound * (1.0 + 1e-12));
    }

    #[test]
    fn lower_symbol_is_normalized(seed in any::<u64>(), lambda in 0.1..1.0f64) {
        let basis = Arc::new(FockBasis::new(1, vec![Mode::ZERO], 8).unwrap());
        let st = random_density(&basis, &mut stream(seed, 3), true).unwrap();
        let sym = LowerSymbol::new(&st, basis.modes(), lambda).unwrap();
        let total = sym.integrate(24, 40, |_| Complex64::new(1.0, 0.0)).unwrap();
        prop_assert!((total.re - 1.0).abs() < 1e-8);
    }
}
