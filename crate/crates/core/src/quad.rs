//! Thin wrappers over the `quadrature` (tanh-sinh) and `gauss-quad` crates.

use std::num::NonZeroUsize;

use gauss_quad::{GaussLaguerre, GaussLegendre};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

/// Tanh-sinh on [a, b] with interval bisection until each piece meets its share of `tol`.
/// Pieces stop splitting once below `tol / 64`; the total error is at most a few `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<Integral> {
    adaptive(&f, a, b, tol, tol / 64.0, 0)
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, floor: f64, depth: usize) -> Result<Integral> {
    let out = quadrature::double_exponential::integrate(f, a, b, tol);
    if !out.integral.is_finite() {
        return Err(Error::Quadrature { value: out.integral, error: f64::INFINITY });
    }
    if out.error_estimate <= tol.max(floor).max(64.0 * f64::EPSILON * out.integral.abs()) {
        return Ok(Integral { value: out.integral, error: out.error_estimate });
    }
    if depth >= 24 {
        return Err(Error::Quadrature { value: out.integral, error: out.error_estimate });
    }
    let m = 0.5 * (a + b);
    let left = adaptive(f, a, m, 0.5 * tol, floor, depth + 1)?;
    let right = adaptive(f, m, b, 0.5 * tol, floor, depth + 1)?;
    Ok(Integral { value: left.value + right.value, error: left.error + right.error })
}

/// Integral over [a, inf) through x = a + t / (1 - t).
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> Result<Integral> {
    let g = |t: f64| {
        let s = 1.0 - t;
        let x = a + t / s;
        let v = f(x) / (s * s);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, tol)
}

/// Gauss-Laguerre nodes and weights for weight x^alpha e^{-x}.
pub fn gauss_laguerre(n: usize, alpha: f64) -> Vec<(f64, f64)> {
    let rule = GaussLaguerre::new(
        NonZeroUsize::new(n.max(1)).expect("nonzero"),
        gauss_quad::FiniteAboveNegOneF64::new(alpha).expect("alpha > -1"),
    );
    rule.iter().map(|(x, w)| (*x, *w)).collect()
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n.max(2)).expect("nonzero"));
    rule.iter().map(|(x, w)| (*x, *w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_integrals() {
        let r = integrate(|x| x.exp(), 0.0, 1.0, 1e-13).unwrap();
        assert!((r.value - (1f64.exp() - 1.0)).abs() < 1e-12);
        let r = integrate_to_infinity(|x| (-x * x).exp(), 0.0, 1e-12).unwrap();
        assert!((r.value - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn laguerre_moments() {
        let rule = gauss_laguerre(8, 0.0);
        // int x^k e^{-x} = k!
        let m5: f64 = rule.iter().map(|(x, w)| w * x.powi(5)).sum();
        assert!((m5 - 120.0).abs() < 1e-9);
        let rule = gauss_legendre(6);
        let s: f64 = rule.iter().map(|(x, w)| w * x.powi(4)).sum();
        assert!((s - 0.4).abs() < 1e-14);
    }
}
