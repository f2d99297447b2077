//! Empirical frequencies of the per-iteration accuracy events.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::RunRecord;

/// Normal quantile for a two-sided 95% interval.
const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `n` at 95%.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frequency {
    pub successes: usize,
    pub n: usize,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Frequency {
    fn new(successes: usize, n: usize) -> Self {
        let (lo, hi) = wilson_interval(successes, n);
        Self {
            successes,
            n,
            estimate: successes as f64 / n as f64,
            lo,
            hi,
        }
    }
}

/// Pooled event frequencies for one method label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationRow {
    pub method: String,
    pub iterations: usize,
    pub a: Frequency,
    pub b: Frequency,
    pub c: Frequency,
    pub i: Frequency,
    pub theta: Frequency,
    /// Set when the accurate-iteration frequency falls to 1/2 or below, where
    /// the probabilistic model no longer favours accurate iterations.
    pub below_half: bool,
}

/// Frequencies of A_k, B_k, C_k, I_k and Theta_k pooled over every logged
/// iteration of each method, in label order.
pub fn classification_stats(records: &[(String, &RunRecord)]) -> Result<Vec<ClassificationRow>> {
    let mut pooled: BTreeMap<&str, [usize; 6]> = BTreeMap::new();
    for (label, rec) in records {
        let acc = pooled.entry(label.as_str()).or_default();
        for l in &rec.logs {
            if l.trace.value_errors.is_empty() || l.trace.gradient_error.is_none() {
                return Err(Error::DiagnosticsUnavailable);
            }
            acc[0] += 1;
            acc[1] += usize::from(l.events.a);
            acc[2] += usize::from(l.events.b);
            acc[3] += usize::from(l.events.c);
            acc[4] += usize::from(l.accurate());
            acc[5] += usize::from(l.accepted);
        }
    }
    let mut out = Vec::with_capacity(pooled.len());
    for (label, [n, a, b, c, i, t]) in pooled {
        if n == 0 {
            return Err(Error::DiagnosticsUnavailable);
        }
        let row = ClassificationRow {
            method: label.to_string(),
            iterations: n,
            a: Frequency::new(a, n),
            b: Frequency::new(b, n),
            c: Frequency::new(c, n),
            i: Frequency::new(i, n),
            theta: Frequency::new(t, n),
            below_half: (i as f64) <= 0.5 * n as f64,
        };
        if row.below_half {
            log::warn!(
                "{label}: accurate-iteration frequency {:.3} is not above 1/2",
                row.i.estimate
            );
        }
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_brackets_estimate() {
        let (lo, hi) = wilson_interval(90, 100);
        assert!(lo < 0.9 && 0.9 < hi);
        assert!((lo - 0.8256).abs() < 1e-3 && (hi - 0.9448).abs() < 1e-3);
        let (lo, hi) = wilson_interval(10, 10);
        assert!((hi - 1.0).abs() <= 1e-12 && (lo - 0.7225).abs() < 1e-3);
    }
}
