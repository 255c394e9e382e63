//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use std::sync::Arc;
use wmlab::diffusion::{Ddim, ToyModelSpec};
use wmlab::schedule::NoiseSchedule;

/// `P(X > c)` for `X ~ Bin(k, ½)`, from exact big-integer binomial sums.
pub fn exact_binomial_tail(c: u64, k: u64) -> f64 {
    let mut coef = BigUint::one();
    let mut num = BigUint::zero();
    for i in 0..=k {
        if i > c {
            num += &coef;
        }
        coef = coef * BigUint::from(k - i) / BigUint::from(i + 1);
    }
    // num / 2^k, keeping precision for tiny tails.
    let bits = num.bits() as i64;
    let shift = (bits - 60).max(0) as u32;
    let mantissa = (&num >> shift).to_f64().unwrap();
    mantissa * 2f64.powi(shift as i32 - k as i32)
}

/// Mann–Whitney AUC by comparing every pair.
pub fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for &p in pos {
        for &n in neg {
            s += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

/// Central finite-difference gradient.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            let hi = h * x[i].abs().max(1.0);
            a[i] += hi;
            b[i] -= hi;
            (f(&a) - f(&b)) / (2.0 * hi)
        })
        .collect()
}

/// Toy model of dimension `d` on a `steps`-step DDIM grid.
pub fn small_ddim(d: usize, steps: usize, means_seed: u64) -> Ddim<f64> {
    let spec = ToyModelSpec { d, k: 4, means_seed, ..ToyModelSpec::default() };
    let schedule = NoiseSchedule::<f64>::linear(1000, 0.00085, 0.012).and_then(|s| s.subsample(steps)).unwrap();
    Ddim::new(Arc::new(spec.build().unwrap()), &schedule)
}
