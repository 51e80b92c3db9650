//! Streaming estimators: batch means, integrated autocorrelation, log-mean-exp.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    /// Number of samples divided by the estimated integrated autocorrelation time.
    pub effective_samples: f64,
}

impl Estimate {
    /// |a - b| in units of the combined standard error.
    pub fn sigma_gap(&self, other: &Estimate) -> f64 {
        let s = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        (self.mean - other.mean).abs() / s
    }
}

/// Batch-means accumulator; batches have a fixed length chosen up front.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchMeans {
    batch_len: u64,
    current: f64,
    filled: u64,
    batches: Vec<f64>,
    count: u64,
    mean: f64,
    m2: f64,
}

impl BatchMeans {
    pub fn new(batch_len: u64) -> Self {
        BatchMeans { batch_len: batch_len.max(1), current: 0.0, filled: 0, batches: Vec::new(), count: 0, mean: 0.0, m2: 0.0 }
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        self.current += x;
        self.filled += 1;
        if self.filled == self.batch_len {
            self.batches.push(self.current / self.batch_len as f64);
            self.current = 0.0;
            self.filled = 0;
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn estimate(&self) -> Estimate {
        let b = self.batches.len();
        if b < 2 {
            return Estimate { mean: self.mean, stderr: f64::INFINITY, effective_samples: 0.0 };
        }
        let bm: f64 = self.batches.iter().sum::<f64>() / b as f64;
        let var_b: f64 = self.batches.iter().map(|x| (x - bm).powi(2)).sum::<f64>() / (b - 1) as f64;
        let stderr = (var_b / b as f64).sqrt();
        let ess = if stderr > 0.0 { self.variance() / (stderr * stderr) } else { self.count as f64 };
        Estimate { mean: self.mean, stderr, effective_samples: ess.min(self.count as f64) }
    }
}

/// Integrated autocorrelation time (in samples) with Sokal's self-consistent window c = 6.
pub fn autocorr_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return 1.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = xs.iter().map(|x| Complex::new(x - mean, 0.0)).collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let c0 = buf[0].re;
    if c0 <= 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n {
        tau += 2.0 * buf[lag].re / c0;
        if lag as f64 >= 6.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Mean with autocorrelation-corrected standard error from stored samples.
pub fn estimate(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let tau = autocorr_time(xs);
    Estimate { mean, stderr: (var * tau / n).sqrt(), effective_samples: n / tau }
}

/// Streaming log(mean(exp(x_i))) with a running maximum.
#[derive(Clone, Debug, Default)]
pub struct LogMeanExp {
    max: f64,
    sum: f64,
    n: u64,
}

impl LogMeanExp {
    pub fn new() -> Self {
        LogMeanExp { max: f64::NEG_INFINITY, sum: 0.0, n: 0 }
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    pub fn value(&self) -> f64 {
        self.max + (self.sum / self.n as f64).ln()
    }
}

/// Least-squares slope of log|y| against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn log_mean_exp_is_stable() {
        let mut l = LogMeanExp::new();
        for x in [1000.0, 1000.0, 1000.0 + 2f64.ln()] {
            l.push(x);
        }
        assert!((l.value() - (1000.0 + (4.0f64 / 3.0).ln())).abs() < 1e-12);
    }

    #[test]
    fn ar1_autocorrelation_time() {
        // AR(1) with coefficient r has tau = (1 + r) / (1 - r)
        let r: f64 = 0.8;
        let mut rng = stream(5, 0);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                x = r * x + e;
                x
            })
            .collect();
        let tau = autocorr_time(&xs);
        assert!((tau - 9.0).abs() < 1.0, "tau = {tau}");
        let mut bm = BatchMeans::new(1000);
        xs.iter().for_each(|&v| bm.push(v));
        let e = bm.estimate();
        assert!((e.effective_samples / (200_000.0 / 9.0) - 1.0).abs() < 0.35);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.2, 0.1, 0.05];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((loglog_slope(&x, &y) - 1.5).abs() < 1e-12);
    }
}
