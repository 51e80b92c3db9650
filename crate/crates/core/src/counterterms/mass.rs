//! Finite mass shifts generated by the commutator term: continuum constants and their
//! lattice analogs at finite scale and time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latsum::{bracket_power_sum, even_convolve, for_each_orbit, smooth_length, Compensated, EvenGrid};
use crate::quad;
use crate::spectral::{Mode, Potential};
use crate::{two_pi_powi, TWO_PI};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassShifts {
    pub c1: f64,
    pub c2: f64,
    /// Combined quadrature or truncation error estimate (applies to each entry).
    pub error: f64,
}

/// Below this radius the inner integral divided by r^2 is replaced by its value at the radius.
const SMALL_RADIUS: f64 = 1e-4;

/// Angle-averaged numerator for fixed radii; the linear Taylor term integrates to zero over
/// the angle. With M(r) = int_0^r t v(t) dt this is
/// 2 v(r_y) - (M(r_x + r_y) - M(|r_x - r_y|)) / (r_x r_y),
/// which cancels badly when either radius is small. There the equivalent form
/// (1 / (r_x r_y)) * int_{|r_x - r_y|}^{r_x + r_y} t (v(r_y) - v(t)) dt
/// over a short interval is used instead.
fn angular(p: &Potential, rule: &[(f64, f64)], rx: f64, ry: f64) -> f64 {
    let vy = p.profile_at(ry);
    if ry <= 0.0 {
        return 2.0 * (vy - p.profile_at(rx));
    }
    let (lo, hi) = ((rx - ry).abs(), rx + ry);
    if rx.min(ry) >= 0.1 {
        return 2.0 * vy - (p.profile_moment(hi) - p.profile_moment(lo)) / (rx * ry);
    }
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let acc: f64 = rule
        .iter()
        .map(|&(x, w)| {
            let t = mid + half * x;
            w * t * (vy - p.profile_at(t))
        })
        .sum();
    half * acc / (rx * ry)
}

/// The integrand in r_y lives near 0 and near r_x; break the range there.
fn inner(p: &Potential, rule: &[(f64, f64)], rx: f64, tol: f64) -> Result<f64> {
    let f = |ry: f64| angular(p, rule, rx, ry);
    let width = 4.0;
    let mut cuts = vec![0.0, rx.min(width)];
    for c in [rx - width, rx, rx + width] {
        if c > *cuts.last().unwrap() {
            cuts.push(c);
        }
    }
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        acc += quad::integrate(f, w[0], w[1], tol / 8.0)?.value;
    }
    acc += quad::integrate_to_infinity(f, *cuts.last().unwrap(), tol / 8.0)?.value;
    Ok(acc)
}

/// The two continuum constants (3-d), from the unscaled profile.
pub fn c1_c2(p: &Potential) -> Result<MassShifts> {
    if matches!(p.profile, crate::spectral::Profile::Off) {
        return Err(Error::Unsupported("mass shifts need a non-zero profile".into()));
    }
    let rule = quad::gauss_legendre(24);
    // the inner integral is O(r_x^2) for small r_x and enters with weight r_x^{-2}
    let tol = |rx: f64| 1e-9 * rx * rx;
    let small = inner(p, &rule, SMALL_RADIUS, tol(SMALL_RADIUS))? / (SMALL_RADIUS * SMALL_RADIUS);
    let scaled = |rx: f64| -> f64 {
        inner(p, &rule, rx, tol(rx)).unwrap_or(f64::NAN) / (rx * rx)
    };
    let pref = 8.0 * std::f64::consts::PI.powi(2) / two_pi_powi(6);
    let mut out = [0.0; 2];
    let mut err = 0.0;
    for (i, weighted) in [true, false].into_iter().enumerate() {
        let g = |rx: f64| {
            let w = if weighted { p.profile_at(rx) } else { 1.0 };
            0.5 * w * scaled(rx)
        };
        // constant below SMALL_RADIUS up to O(r^2); integrate that piece directly
        let head = SMALL_RADIUS * 0.5 * small * if weighted { p.profile_at(0.5 * SMALL_RADIUS) } else { 1.0 };
        let a = quad::integrate(g, SMALL_RADIUS, 1.0, 1e-10)?;
        let b = quad::integrate_to_infinity(g, 1.0, 1e-10)?;
        let total = head + a.value + b.value;
        if !total.is_finite() {
            return Err(Error::Quadrature { value: total, error: f64::INFINITY });
        }
        out[i] = pref * total;
        err += pref * (a.error + b.error + SMALL_RADIUS.powi(3) * small.abs());
    }
    Ok(MassShifts { c1: out[0], c2: out[1], error: err })
}

/// Radius beyond which the scaled profile stays below 1e-17, if reachable within `cap`.
fn support_radius(p: &Potential, cap: usize) -> Option<usize> {
    let small = |r: f64| p.hat_at(r) <= 1e-17;
    (0..=cap).find(|&j| (1..=8).all(|m| small((j * m) as f64)) && small(j as f64 + 0.5))
}

/// Lattice analogs at scale `p.eps` and time `t` (3-d), summed over |k1|_inf <= max(k_sum, J)
/// where J is the numerical support radius of the scaled profile. The inner sum over all of
/// Z^3 is exact; the outer tail of the unweighted sum is estimated from the large-k1
/// asymptotics of the inner sum.
pub fn c1_c2_eps(p: &Potential, t: f64, k_sum: usize) -> Result<MassShifts> {
    if !(t > 0.0) {
        return Err(crate::error::invalid("time must be positive"));
    }
    let j = support_radius(p, 400).ok_or(Error::Tail {
        value: f64::NAN,
        bound: p.hat_at(400.0),
        tol: 1e-17,
        k_sum,
    })?;
    let k = k_sum.max(j).max(1);
    let g_radius = k + j;
    let period = smooth_length(2 * g_radius + 1);
    let mut vg = EvenGrid::new(3, period);
    vg.fill(j, |q| p.hat(q));
    let mut gg = EvenGrid::new(3, period);
    gg.fill(g_radius, |q| 1.0 / q.bracket2());
    let conv = even_convolve(&vg, &gg);
    drop(gg);
    let s0 = conv.get(Mode::ZERO);

    let mut volume = Compensated::default();
    for_each_orbit(3, j as i32, |q, m| volume.add(m as f64 * p.hat(q)));
    let volume = volume.value();

    let (mut c1, mut c2) = (Compensated::default(), Compensated::default());
    // box sums of (1 - e^{-2 t mu}) / mu^p for p = 2, 3
    let (mut box2, mut box3) = (Compensated::default(), Compensated::default());
    for_each_orbit(3, k as i32, |q, m| {
        let mu = q.bracket2();
        let m = m as f64;
        let r = s0 - conv.get(q);
        let f = -(-2.0 * t * mu).exp_m1() / (2.0 * mu * mu);
        c1.add(m * p.hat(q) * r * f);
        c2.add(m * r * f);
        let damp = -(-2.0 * t * mu).exp_m1();
        box2.add(m * damp / (mu * mu));
        box3.add(m * damp / (mu * mu * mu));
    });
    let full = |p: f64| -> Result<f64> { Ok(bracket_power_sum(3, p, 0.0)? - bracket_power_sum(3, p, 2.0 * t)?) };
    let tail2 = full(2.0)? - box2.value();
    let tail3 = full(3.0)? - box3.value();
    // beyond the box the inner sum is S0 - V / <k1>^2 up to relative O(J^2 / k^2)
    let tail = 0.5 * (s0 * tail2 - volume * tail3);
    // heuristic: the next correction is smaller than the V term by about (J / k)^2
    let tail_err = 0.5 * volume * tail3 * ((j as f64 + 1.0) / (k as f64 + 1.0)).powi(2);
    let scale = two_pi_powi(-6);
    Ok(MassShifts {
        c1: c1.value() * scale,
        c2: (c2.value() + tail) * scale,
        error: tail_err * scale + 1e-15 * s0 * scale,
    })
}

/// Direct double sum for c1 and c2 over |k1|, |k|, |k1 - k| <= r; test oracle and tiny-r helper.
#[doc(hidden)]
pub fn c1_c2_eps_brute(p: &Potential, t: f64, r_outer: i32, r_inner: i32) -> (f64, f64) {
    let mut inner_pts = Vec::new();
    crate::spectral::for_each_in_box(3, r_inner, |q| inner_pts.push(q));
    let mut outer = Vec::new();
    crate::spectral::for_each_in_box(3, r_outer, |q| outer.push(q));
    let (mut c1, mut c2) = (0.0, 0.0);
    for &k1 in &outer {
        let mu1 = k1.bracket2();
        let f = -(-2.0 * t * mu1).exp_m1() / (2.0 * mu1 * mu1);
        let r: f64 = inner_pts.iter().map(|&k| (p.hat(k) - p.hat(k1 - k)) / k.bracket2()).sum();
        c1 += p.hat(k1) * r * f;
        c2 += r * f;
    }
    (c1 / TWO_PI.powi(6), c2 / TWO_PI.powi(6))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    /// Plain Monte Carlo over (r_x, r_y, s) of the printed integrands, Taylor term included.
    fn monte_carlo(p: &Potential, n: usize, seed: u64) -> ([f64; 2], [f64; 2]) {
        let mut rng = stream(seed, 0);
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let (ux, uy): (f64, f64) = (rng.random(), rng.random());
            let s: f64 = 2.0 * rng.random::<f64>() - 1.0;
            let rx = ux / (1.0 - ux);
            let ry = uy / (1.0 - uy);
            let jac = 2.0 / ((1.0 - ux).powi(2) * (1.0 - uy).powi(2));
            let rho = (rx * rx + ry * ry - 2.0 * rx * ry * s).max(0.0).sqrt();
            let mut num = p.profile_at(ry) - p.profile_at(rho);
            if rx <= 1.0 {
                num -= rx * s * p.profile_slope(ry);
            }
            let base = 8.0 * std::f64::consts::PI.powi(2) / TWO_PI.powi(6) * num / (2.0 * rx * rx) * jac;
            let vals = [p.profile_at(rx) * base, base];
            for i in 0..2 {
                let v = if vals[i].is_finite() { vals[i] } else { 0.0 };
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        let nf = n as f64;
        let mean = sum.map(|s| s / nf);
        let se = [0, 1].map(|i| ((sq[i] / nf - mean[i] * mean[i]) / nf).sqrt());
        (mean, se)
    }

    #[test]
    fn quadrature_agrees_with_monte_carlo() {
        let p = Potential::gaussian(1.0, 1.0).unwrap();
        let q = c1_c2(&p).unwrap();
        let (mean, se) = monte_carlo(&p, 10_000_000, 11);
        assert!((q.c1 - mean[0]).abs() < 3.0 * se[0], "{} vs {} +- {}", q.c1, mean[0], se[0]);
        assert!((q.c2 - mean[1]).abs() < 3.0 * se[1], "{} vs {} +- {}", q.c2, mean[1], se[1]);
    }

    #[test]
    fn constant_profile_cancels() {
        // v = 1 on [0, 1e100]: the angle-averaged numerator vanishes identically
        let flat = Potential::table(vec![0.0, 1e100], vec![1.0, 1.0], 1.0).unwrap();
        let rule = quad::gauss_legendre(24);
        for rx in [1e-3, 0.05, 0.5, 3.0, 40.0] {
            for ry in [0.0, 1e-4, 0.07, 0.9, 2.5, 60.0] {
                assert!(angular(&flat, &rule, rx, ry).abs() < 1e-13, "rx={rx} ry={ry}");
            }
        }
    }

    #[test]
    fn lattice_sum_matches_brute_force() {
        // wide profile: support fits in a small box, so the brute force is exact enough
        let p = Potential::gaussian(1.0, 0.9).unwrap();
        let fast = c1_c2_eps(&p, 0.7, 6).unwrap();
        let inner = support_radius(&p, 400).unwrap() as i32;
        let (c1, _) = c1_c2_eps_brute(&p, 0.7, inner, 2 * inner);
        assert!((fast.c1 - c1).abs() < 1e-13, "{} vs {}", fast.c1, c1);
    }

    #[test]
    fn vanishes_at_small_time() {
        let p = Potential::gaussian(1.0, 0.5).unwrap();
        let q = c1_c2_eps(&p, 1e-9, 8).unwrap();
        assert!(q.c1.abs() < 1e-11);
        // the unweighted sum only vanishes like sqrt(t)
        let q2 = c1_c2_eps(&p, 1e-7, 8).unwrap();
        assert!(q.c2 > 0.0 && (q2.c2 / q.c2 - 10.0).abs() < 1.0);
    }
}
