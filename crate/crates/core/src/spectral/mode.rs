use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Integer wave vector. Unused trailing components stay zero for d < 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub struct Mode(pub [i32; 3]);

impl Mode {
    pub const ZERO: Mode = Mode([0, 0, 0]);

    pub fn new(k: &[i32]) -> Mode {
        let mut m = [0; 3];
        m[..k.len()].copy_from_slice(k);
        Mode(m)
    }

    pub fn axis(i: usize, n: i32) -> Mode {
        let mut m = [0; 3];
        m[i] = n;
        Mode(m)
    }

    pub fn norm2(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    pub fn norm(&self) -> f64 {
        (self.norm2() as f64).sqrt()
    }

    /// <k>^2 = 1 + |k|^2.
    pub fn bracket2(&self) -> f64 {
        1.0 + self.norm2() as f64
    }

    pub fn sup_norm(&self) -> i32 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn components(&self, d: usize) -> Vec<i32> {
        self.0[..d].to_vec()
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.0.iter()).map(|(a, &b)| a * b as f64).sum()
    }
}

impl Add for Mode {
    type Output = Mode;
    fn add(self, o: Mode) -> Mode {
        Mode([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Mode {
    type Output = Mode;
    fn sub(self, o: Mode) -> Mode {
        Mode([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Mode {
    type Output = Mode;
    fn neg(self) -> Mode {
        Mode([-self.0[0], -self.0[1], -self.0[2]])
    }
}
