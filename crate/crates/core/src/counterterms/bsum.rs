//! Double lattice sums for the quadratic counterterm.

use crate::latsum::{even_convolve, for_each_orbit, Compensated, EvenGrid};
use crate::spectral::Mode;
use crate::two_pi_powi;

/// Kernel 1 / ((2pi)^6 <k1>^2 <k2>^2 (<k1>^2 + <k2>^2 + <k1+k2>^2)).
pub fn b_kernel(k1: Mode, k2: Mode) -> f64 {
    let (m1, m2, m3) = (k1.bracket2(), k2.bracket2(), (k1 + k2).bracket2());
    1.0 / (two_pi_powi(6) * m1 * m2 * (m1 + m2 + m3))
}

/// The kernel damped at time t by 1 - exp(-t (<k1>^2 + <k2>^2 + <k1+k2>^2)).
pub fn b_kernel_at(t: f64, k1: Mode, k2: Mode) -> f64 {
    let s = k1.bracket2() + k2.bracket2() + (k1 + k2).bracket2();
    b_kernel(k1, k2) * -(-t * s).exp_m1()
}

/// Raw sums over {|k1|, |k2|, |k1+k2| <= r in sup norm}, before the (2pi)^{-2d} prefactor:
/// `[direct, b1, b2, b3, b4]` where `direct` is the symmetric form of 6b.
pub(crate) fn direct_sums(
    d: usize,
    r: i32,
    vhat: &(dyn Fn(Mode) -> f64 + Sync),
    weight: &(dyn Fn(Mode) -> f64 + Sync),
) -> [f64; 5] {
    let side = (2 * r + 1) as usize;
    let sides: [usize; 3] = std::array::from_fn(|a| if a < d { side } else { 1 });
    let strides = [sides[1] * sides[2], sides[2], 1];
    let lo: [i32; 3] = std::array::from_fn(|a| if a < d { -r } else { 0 });
    let len = sides.iter().product::<usize>();
    let mut mu = vec![0.0; len];
    let mut v = vec![0.0; len];
    let mut w = vec![0.0; len];
    for i in 0..len {
        let k = Mode(std::array::from_fn(|a| (i / strides[a] % sides[a]) as i32 + lo[a]));
        mu[i] = k.bracket2();
        v[i] = vhat(k);
        w[i] = weight(k);
    }
    let index = |k: &Mode| -> usize { (0..3).map(|a| (k.0[a] - lo[a]) as usize * strides[a]).sum() };

    let mut reps = Vec::new();
    for_each_orbit(d, r, |k, m| reps.push((k, m)));

    let row = |&(k1, mult): &(Mode, u64)| -> [f64; 5] {
        let i1 = index(&k1);
        let (m1, v1, w1) = (mu[i1], v[i1], w[i1]);
        let mut out = [0.0; 5];
        if w1 == 0.0 {
            return out;
        }
        let hi: [i32; 3] = std::array::from_fn(|a| if a < d { r - k1.0[a] } else { 0 });
        let shift = i1 as isize - index(&Mode::ZERO) as isize;
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                let mut acc = [0.0; 5];
                let base = index(&Mode([x, y, lo[2]]));
                let n = (hi[2] - lo[2] + 1) as usize;
                for j in base..base + n {
                    let j3 = (j as isize + shift) as usize;
                    let w123 = w1 * w[j] * w[j3];
                    let (m2, m3) = (mu[j], mu[j3]);
                    let inv12 = w123 / (m1 * m2);
                    let direct = inv12 / m3;
                    let b = inv12 / (m1 + m2 + m3);
                    let (v2, v3) = (v[j], v[j3]);
                    acc[0] += direct * v1 * (v1 + v2);
                    acc[1] += b * v3 * v3;
                    acc[2] += b * v3 * v1;
                    acc[3] += b * v1 * v1;
                    acc[4] += b * v1 * v2;
                }
                for (o, a) in out.iter_mut().zip(acc) {
                    *o += a;
                }
            }
        }
        out.map(|x| x * mult as f64)
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<[f64; 5]> = {
        use rayon::prelude::*;
        reps.par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<[f64; 5]> = reps.iter().map(row).collect();

    let mut total = [Compensated::default(); 5];
    for r in &rows {
        for (t, x) in total.iter_mut().zip(r) {
            t.add(*x);
        }
    }
    total.map(|t| t.value())
}

/// Symmetric form of 6b over the same truncation region, via cosine convolution.
/// Cost is a few FFT passes over a (3r/2)^d grid instead of the O(r^{2d}) double loop.
pub(crate) fn six_b_convolved(
    d: usize,
    r: i32,
    vhat: &(dyn Fn(Mode) -> f64 + Sync),
    weight: &(dyn Fn(Mode) -> f64 + Sync),
) -> f64 {
    // (g*g)(k1) and (h*g)(k1) are needed only for |k1| <= r while their supports reach 2r,
    // so any period above 3r avoids wrap-around.
    let period = crate::latsum::smooth_length(3 * r as usize + 1);
    let ru = r as usize;
    let mut g = EvenGrid::new(d, period);
    g.fill(ru, |k| weight(k) / k.bracket2());
    let mut h = EvenGrid::new(d, period);
    h.fill(ru, |k| weight(k) * vhat(k) / k.bracket2());
    let gg = even_convolve(&g, &g);
    let hg = even_convolve(&h, &g);
    let mut acc = Compensated::default();
    for_each_orbit(d, r, |k, m| {
        let w = weight(k);
        if w == 0.0 {
            return;
        }
        let v = vhat(k);
        let term = w * v / k.bracket2() * (v * gg.get(k) + hg.get(k));
        acc.add(m as f64 * term);
    });
    acc.value() / two_pi_powi(2 * d as i32)
}
