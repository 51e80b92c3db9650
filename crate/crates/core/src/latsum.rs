//! Shared machinery for lattice sums: orbit enumeration, compensated accumulation,
//! radial tail bounds and convolution of per-axis even arrays.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::Result;
use crate::quad;
use crate::spectral::Mode;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Size of the orbit of k under signed permutations of its d components.
pub fn orbit_size(k: &[i32]) -> u64 {
    let d = k.len();
    let nonzero = k.iter().filter(|&&c| c != 0).count();
    let mut perms: u64 = (1..=d as u64).product();
    let mut sorted: Vec<i32> = k.iter().map(|c| c.abs()).collect();
    sorted.sort_unstable();
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j < d && sorted[j] == sorted[i] {
            j += 1;
        }
        perms /= (1..=(j - i) as u64).product::<u64>();
        i = j;
    }
    perms << nonzero
}

/// Visits 0 <= k_1 <= ... <= k_d <= r (one point per signed-permutation orbit of the box)
/// together with the orbit size.
pub fn for_each_orbit(d: usize, r: i32, mut f: impl FnMut(Mode, u64)) {
    fn rec(d: usize, r: i32, prefix: &mut Vec<i32>, f: &mut dyn FnMut(Mode, u64)) {
        if prefix.len() == d {
            f(Mode::new(prefix), orbit_size(prefix));
            return;
        }
        let lo = prefix.last().copied().unwrap_or(0);
        for c in lo..=r {
            prefix.push(c);
            rec(d, r, prefix, f);
            prefix.pop();
        }
    }
    rec(d, r, &mut Vec::with_capacity(d), &mut f);
}

/// Area of the unit sphere in R^d.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => std::f64::consts::TAU,
        _ => 4.0 * std::f64::consts::PI,
    }
}

/// Upper bound on sum_{|k|_inf > r} f(|k|) for f radially non-increasing and non-negative:
/// each lattice point is dominated by the integral over its unit cell shifted inwards.
pub fn radial_tail_bound(d: usize, r: usize, f: impl Fn(f64) -> f64, tol: f64) -> Result<f64> {
    let h = 0.5 * (d as f64).sqrt();
    let start = r as f64 + 1.0 - h;
    if start - h <= 0.0 && !f(0.0).is_finite() {
        return Ok(f64::INFINITY);
    }
    let g = |x: f64| x.powi(d as i32 - 1) * f((x - h).max(0.0));
    Ok(sphere_area(d) * quad::integrate_to_infinity(g, start, tol)?.value)
}

/// Smallest 5-smooth integer >= n.
pub fn smooth_length(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut x = m;
        for p in [2, 3, 5] {
            while x % p == 0 {
                x /= p;
            }
        }
        if x == 1 {
            return m;
        }
        m += 1;
    }
}

/// Array on the non-negative octant [0, h]^d of a function even in every coordinate,
/// representing one period of length `period` of its periodization.
#[derive(Clone, Debug)]
pub struct EvenGrid {
    pub d: usize,
    pub half: usize,
    pub period: usize,
    pub data: Vec<f64>,
}

impl EvenGrid {
    pub fn new(d: usize, period: usize) -> Self {
        let half = period / 2;
        EvenGrid { d, half, period, data: vec![0.0; (half + 1).pow(d as u32)] }
    }

    /// Fills the octant with f(k) for |k|_inf <= r (zero beyond).
    pub fn fill(&mut self, r: usize, f: impl Fn(Mode) -> f64) {
        let r = r.min(self.half);
        let n = self.half + 1;
        for idx in 0..self.data.len() {
            let mut rest = idx;
            let mut k = [0i32; 3];
            let mut inside = true;
            for a in (0..self.d).rev() {
                let c = rest % n;
                rest /= n;
                k[a] = c as i32;
                inside &= c <= r;
            }
            self.data[idx] = if inside { f(Mode(k)) } else { 0.0 };
        }
    }

    pub fn get(&self, k: Mode) -> f64 {
        let mut idx = 0;
        for a in 0..self.d {
            idx = idx * (self.half + 1) + k.0[a].unsigned_abs() as usize;
        }
        self.data[idx]
    }

    /// In-place cosine transform: sum over one full period along every axis.
    pub fn transform(&mut self, planner: &mut FftPlanner<f64>) {
        let l = self.period;
        let n = self.half + 1;
        let fft = planner.plan_fft_forward(l);
        let mut buf = vec![Complex::new(0.0, 0.0); l];
        let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for axis in 0..self.d {
            let stride = n.pow((self.d - 1 - axis) as u32);
            let lines = self.data.len() / n;
            for line in 0..lines {
                // base index of the line with the axis coordinate at 0
                let outer = line / stride;
                let inner = line % stride;
                let base = outer * stride * n + inner;
                for (j, b) in buf.iter_mut().enumerate() {
                    let m = j.min(l - j);
                    *b = Complex::new(self.data[base + m * stride], 0.0);
                }
                fft.process_with_scratch(&mut buf, &mut scratch);
                for p in 0..n {
                    self.data[base + p * stride] = buf[p].re;
                }
            }
        }
    }
}

/// Cyclic convolution of two per-axis even grids with the same period.
pub fn even_convolve(a: &EvenGrid, b: &EvenGrid) -> EvenGrid {
    let mut planner = FftPlanner::new();
    let mut fa = a.clone();
    fa.transform(&mut planner);
    let mut fb = b.clone();
    fb.transform(&mut planner);
    for (x, y) in fa.data.iter_mut().zip(&fb.data) {
        *x *= y;
    }
    drop(fb);
    fa.transform(&mut planner);
    let scale = 1.0 / (a.period as f64).powi(a.d as i32);
    fa.data.iter_mut().for_each(|x| *x *= scale);
    fa
}

/// Jacobi theta sum_{n in Z} e^{-s n^2}, switching to the dual series for small s.
pub fn theta3(s: f64) -> f64 {
    if s >= 1.0 {
        let mut acc = 1.0;
        let mut n = 1.0;
        loop {
            let t = (-s * n * n).exp();
            acc += 2.0 * t;
            if t < 1e-18 {
                return acc;
            }
            n += 1.0;
        }
    } else {
        let pi2 = std::f64::consts::PI.powi(2);
        let mut acc = 1.0;
        let mut m = 1.0;
        loop {
            let t = (-pi2 * m * m / s).exp();
            acc += 2.0 * t;
            if t < 1e-18 {
                return acc * (std::f64::consts::PI / s).sqrt();
            }
            m += 1.0;
        }
    }
}

/// sum over all of Z^d of (1 + |k|^2)^{-p} e^{-shift (1 + |k|^2)}, p > d/2 (or shift > 0),
/// via the heat-kernel representation.
pub fn bracket_power_sum(d: usize, p: f64, shift: f64) -> Result<f64> {
    let gamma_p = gamma_half_integer(p);
    let f = |s: f64| {
        if s <= 0.0 && shift <= 0.0 {
            0.0
        } else {
            let u = s + shift;
            s.powf(p - 1.0) * (-u).exp() * theta3(u).powi(d as i32)
        }
    };
    // s = u^2 removes the s^{p-1-d/2} endpoint singularity
    let head = quad::integrate(|u| 2.0 * u * f(u * u), 0.0, 1.0, 1e-14)?.value;
    let tail = quad::integrate_to_infinity(f, 1.0, 1e-14)?.value;
    Ok((head + tail) / gamma_p)
}

fn gamma_half_integer(x: f64) -> f64 {
    // integer and half-integer arguments are all that is needed here
    if (x - x.round()).abs() < 1e-12 {
        (1..x.round() as u64).map(|i| i as f64).product()
    } else {
        let mut acc = std::f64::consts::PI.sqrt();
        let mut y = 0.5;
        while y < x - 1e-9 {
            acc *= y;
            y += 1.0;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orbit_sizes_cover_box() {
        for d in 1..=3 {
            let mut total = 0;
            for_each_orbit(d, 4, |_, m| total += m);
            assert_eq!(total, 9u64.pow(d as u32));
        }
        assert_eq!(orbit_size(&[0, 0, 0]), 1);
        assert_eq!(orbit_size(&[1, 1, 1]), 8);
        assert_eq!(orbit_size(&[0, 1, 2]), 24);
        assert_eq!(orbit_size(&[1, 2, 3]), 48);
    }

    #[test]
    fn even_convolution_matches_direct() {
        let d = 2;
        let r: i32 = 3;
        let g = |k: Mode| 1.0 / k.bracket2();
        let h = |k: Mode| (-0.3 * k.norm2() as f64).exp() / k.bracket2();
        let period = smooth_length(3 * r as usize + 1);
        let mut a = EvenGrid::new(d, period);
        a.fill(r as usize, g);
        let mut b = EvenGrid::new(d, period);
        b.fill(r as usize, h);
        let c = even_convolve(&a, &b);
        for k in [Mode::new(&[0, 0]), Mode::new(&[1, 2]), Mode::new(&[3, 3])] {
            let mut direct = 0.0;
            for x in -r..=r {
                for y in -r..=r {
                    let q = Mode::new(&[x, y]);
                    let s = k + q;
                    if s.sup_norm() <= r {
                        direct += h(q) * g(s);
                    }
                }
            }
            assert!((c.get(k) - direct).abs() < 1e-14, "{} vs {}", c.get(k), direct);
        }
    }

    #[test]
    fn theta_branches_agree() {
        let direct: f64 = (-60..=60).map(|n: i32| (-0.999 * (n * n) as f64).exp()).sum();
        assert!((theta3(0.999) - direct).abs() < 1e-14);
        let direct: f64 = (-200..=200).map(|n: i32| (-0.05 * (n * n) as f64).exp()).sum();
        assert!((theta3(0.05) - direct).abs() < 1e-12);
    }

    #[test]
    fn bracket_sum_in_one_dim() {
        // sum 1/(1+n^2) = pi coth(pi)
        let pi = std::f64::consts::PI;
        let exact = pi / pi.tanh();
        assert!((bracket_power_sum(1, 1.0, 0.0).unwrap() - exact).abs() < 1e-11);
    }

    #[test]
    fn tail_bound_dominates() {
        let f = |r: f64| 1.0 / (1.0 + r * r).powi(2);
        let bound = radial_tail_bound(3, 10, f, 1e-12).unwrap();
        let mut exact = 0.0;
        for_each_orbit(3, 60, |k, m| {
            if k.sup_norm() > 10 {
                exact += m as f64 * f(k.norm());
            }
        });
        assert!(bound >= exact, "{bound} < {exact}");
    }
}
