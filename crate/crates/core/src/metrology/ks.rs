//! Two-sample Kolmogorov-Smirnov test with the asymptotic critical value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::EmpiricalDistribution;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub significance: f64,
    pub reject: bool,
}

/// `sup |F_a - F_b|` over the pooled sample, for sorted inputs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// `c(alpha) = sqrt(-ln(alpha / 2) / 2)`.
pub fn critical_coefficient(significance: f64) -> f64 {
    (-(significance / 2.0).ln() / 2.0).sqrt()
}

/// Asymptotic two-sample critical value `c(alpha) * sqrt((n + m) / (n m))`.
pub fn critical_value(n: usize, m: usize, significance: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    critical_coefficient(significance) * ((n + m) / (n * m)).sqrt()
}

/// Rejects equality of the two distributions when `D` exceeds the critical
/// value at `significance`.
pub fn ks_two_sample(a: &EmpiricalDistribution, b: &EmpiricalDistribution, significance: f64) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("KS test needs two non-empty samples".into()));
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::invalid(
            "significance",
            format!("must lie in (0, 1), got {significance}"),
        ));
    }
    let statistic = ks_statistic(a.values(), b.values());
    let critical_value = critical_value(a.len(), b.len(), significance);
    Ok(KsResult {
        statistic,
        critical_value,
        significance,
        reject: statistic > critical_value,
    })
}

/// Fraction of pairs for which the test fails to reject, rounded to three
/// decimals.
pub fn ks_consistency_score(
    pairs: &[(EmpiricalDistribution, EmpiricalDistribution)],
    significance: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("consistency score needs at least one pair".into()));
    }
    let mut consistent = 0usize;
    for (a, b) in pairs {
        if !ks_two_sample(a, b, significance)?.reject {
            consistent += 1;
        }
    }
    Ok((consistent as f64 / pairs.len() as f64 * 1000.0).round() / 1000.0)
}
