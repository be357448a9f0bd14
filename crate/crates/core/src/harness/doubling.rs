//! Deterministic check of the doubling-sum inequality
//! `x_1 + sum_{n >= 2} x_n S_{n-1}^(-alpha) <= 2^alpha / (1 - alpha) S_N^(1 - alpha)`
//! (or `1 + 2 ln S_N` when `alpha = 1`), for positive sequences with
//! `x_1 = 1` and `x_n <= S_{n-1}`, where `S_n` are the partial sums.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::validation::{Check, ThresholdOrigin, ValidationReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn doubling_sum_check(seq: &[f64], alpha: f64) -> Result<DoublingCheck> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if seq.first() != Some(&1.0) {
        return Err(Error::invalid("sequence must start with x_1 = 1"));
    }
    let mut partial = 1.0;
    let mut lhs = 1.0;
    for (i, x) in seq.iter().enumerate().skip(1) {
        if !(*x > 0.0 && *x <= partial) {
            return Err(Error::invalid(format!(
                "x_{} = {x} must be positive and at most the preceding sum {partial}",
                i + 1
            )));
        }
        lhs += x * partial.powf(-alpha);
        partial += x;
    }
    let rhs = if alpha < 1.0 {
        2f64.powf(alpha) / (1.0 - alpha) * partial.powf(1.0 - alpha)
    } else {
        1.0 + 2.0 * partial.ln()
    };
    Ok(DoublingCheck {
        lhs,
        rhs,
        holds: lhs <= rhs,
    })
}

/// A random admissible sequence of length `len`: `x_n = u S_{n-1}` with
/// `u` uniform on `(0, 1]`.
pub fn random_admissible_sequence<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut seq = Vec::with_capacity(len);
    let mut partial = 0.0;
    for i in 0..len {
        let x = if i == 0 {
            1.0
        } else {
            (1.0 - rng.random::<f64>()) * partial
        };
        seq.push(x);
        partial += x;
    }
    seq
}

/// One check per `(sequence, alpha)` pair, folded into a single report line
/// per `alpha` with the worst ratio `lhs / rhs`.
pub fn check_doubling_sums(sequences: &[Vec<f64>], alphas: &[f64]) -> Result<ValidationReport> {
    let mut report = ValidationReport::new("doubling", None);
    for &alpha in alphas {
        let mut worst: f64 = 0.0;
        let mut failures = 0usize;
        for seq in sequences {
            let c = doubling_sum_check(seq, alpha)?;
            worst = worst.max(c.lhs / c.rhs);
            failures += usize::from(!c.holds);
        }
        report.push(Check {
            name: format!("doubling sum, alpha = {alpha}"),
            passed: failures == 0,
            observed: worst,
            threshold: 1.0,
            origin: ThresholdOrigin::Stated,
            interval: None,
            detail: format!(
                "{} sequences, {failures} violations, worst lhs/rhs = {worst:.6}",
                sequences.len()
            ),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximal_doubling_example() {
        let c = doubling_sum_check(&[1.0, 1.0, 2.0, 4.0, 8.0], 0.5).unwrap();
        assert!((c.lhs - 8.2426).abs() < 1e-4);
        assert!((c.rhs - 11.3137).abs() < 1e-4);
        assert!(c.holds);
    }

    #[test]
    fn harmonic_case() {
        for n in 1..50 {
            let seq = vec![1.0; n];
            let c = doubling_sum_check(&seq, 1.0).unwrap();
            let harmonic: f64 = (1..n).map(|k| 1.0 / k as f64).sum();
            assert!((c.lhs - 1.0 - harmonic).abs() < 1e-12);
            assert!(c.holds);
        }
    }

    #[test]
    fn rejects_inadmissible() {
        assert!(doubling_sum_check(&[2.0, 1.0], 0.5).is_err());
        assert!(doubling_sum_check(&[1.0, 1.5], 0.5).is_err());
        assert!(doubling_sum_check(&[1.0, 0.0], 0.5).is_err());
        assert!(doubling_sum_check(&[1.0], 0.0).is_err());
    }
}
