//! Monte-Carlo check of the expected L1 deviation of an empirical uniform
//! distribution with many more categories than samples.
//!
//! With `n` uniform draws over `S` categories, `Z = sum_i |p_hat_i - 1/S|`.
//! When `S` is much larger than `n`, `E[Z]` stays close to 2 while the
//! dimension-free bound `2 sqrt(2 ln n / n) + 2 / n` shrinks with `n`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleResult {
    pub states: usize,
    pub draws: u64,
    pub trials: u64,
    pub mean: f64,
    pub std_error: f64,
    /// `2 sqrt(2 ln n / n) + 2 / n`.
    pub claimed_bound: f64,
    /// `(1 - 1/S)^n`.
    pub lower_bound: f64,
    /// Exact `E[Z]`.
    pub exact_mean: f64,
}

pub fn claimed_bound(draws: u64) -> f64 {
    let n = draws as f64;
    2.0 * (2.0 * n.ln() / n).sqrt() + 2.0 / n
}

pub fn lower_bound(states: usize, draws: u64) -> f64 {
    (1.0 - 1.0 / states as f64).powf(draws as f64)
}

/// Exact `E[Z] = S E|X/n - 1/S|` for `X ~ Binomial(n, 1/S)`, using the
/// closed form `E|X - np| = 2 v C(n, v) p^v q^(n - v + 1)` with
/// `v = floor(np) + 1`.
pub fn expected_z(states: usize, draws: u64) -> f64 {
    let (n, p) = (draws as f64, 1.0 / states as f64);
    let q = 1.0 - p;
    let v = (n * p).floor() + 1.0;
    if v > n {
        return 0.0;
    }
    let mut log_choose = 0.0;
    let mut i = 1.0;
    while i <= v {
        log_choose += ((n - v + i) / i).ln();
        i += 1.0;
    }
    let mad = 2.0 * v * (log_choose + v * p.ln() + (n - v + 1.0) * q.ln()).exp();
    states as f64 * mad / n
}

pub fn counterexample_mc(states: usize, draws: u64, trials: u64, seed: u64) -> Result<CounterexampleResult> {
    if states < 2 {
        return Err(Error::invalid("need at least 2 categories"));
    }
    if draws == 0 || trials == 0 {
        return Err(Error::invalid("draws and trials must be positive"));
    }
    let mut rng = rng::stream(seed, "counterexample");
    let (n, inv_s) = (draws as f64, 1.0 / states as f64);
    let mut buf = vec![0usize; draws as usize];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..trials {
        for b in buf.iter_mut() {
            *b = rng.random_range(0..states);
        }
        buf.sort_unstable();
        let mut z = 0.0;
        let mut occupied = 0usize;
        let mut i = 0;
        while i < buf.len() {
            let j = buf[i..].iter().position(|x| *x != buf[i]).map_or(buf.len(), |k| i + k);
            z += ((j - i) as f64 / n - inv_s).abs();
            occupied += 1;
            i = j;
        }
        z += (states - occupied) as f64 * inv_s;
        sum += z;
        sum_sq += z * z;
    }
    let k = trials as f64;
    let mean = sum / k;
    let var = if trials > 1 {
        (sum_sq - k * mean * mean).max(0.0) / (k - 1.0)
    } else {
        0.0
    };
    Ok(CounterexampleResult {
        states,
        draws,
        trials,
        mean,
        std_error: (var / k).sqrt(),
        claimed_bound: claimed_bound(draws),
        lower_bound: lower_bound(states, draws),
        exact_mean: expected_z(states, draws),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((claimed_bound(50) - 0.8311).abs() < 1e-4);
        assert!((lower_bound(5000, 50) - 0.99005).abs() < 1e-4);
        assert!((expected_z(5000, 50) - 2.0 * lower_bound(5000, 50)).abs() < 1e-12);
    }

    #[test]
    fn small_case_mean() {
        let r = counterexample_mc(2, 1, 500, 1).unwrap();
        // One draw over two categories: Z = |1 - 1/2| + 1/2 = 1 always.
        assert!((r.mean - 1.0).abs() < 1e-12);
        assert_eq!(r.std_error, 0.0);
        assert!((r.exact_mean - 1.0).abs() < 1e-12);
        assert!(counterexample_mc(1, 5, 5, 1).is_err());
    }
}
