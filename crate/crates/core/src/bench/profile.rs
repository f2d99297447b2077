//! Performance profiles over a relative-reduction convergence metric.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::RunRecord;

/// First index `k` with `kkt0 - trace[k] >= (1 - eps_pp)(kkt0 - kkt_best)`.
///
/// A `kkt_best` above `kkt0` is clamped to `kkt0`, which makes index 0 qualify.
pub fn convergence_index(trace: &[f64], kkt0: f64, kkt_best: f64, eps_pp: f64) -> Option<usize> {
    let target = (1.0 - eps_pp) * (kkt0 - kkt_best.min(kkt0));
    trace.iter().position(|&v| kkt0 - v >= target)
}

/// [`convergence_index`] over the true KKT residuals visited by `record`.
pub fn convergence_metric(record: &RunRecord, kkt0: f64, kkt_best: f64, eps_pp: f64) -> Option<usize> {
    convergence_index(&record.kkt_trace(), kkt0, kkt_best, eps_pp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub method: String,
    /// Performance ratio at which the curve is evaluated (>= 1).
    pub ratio: f64,
    pub fraction_solved: f64,
}

/// Cost of one method on one problem instance; `None` means never converged.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEntry {
    pub instance: String,
    pub method: String,
    pub cost: Option<f64>,
}

/// Standard performance profile from per-instance costs.
///
/// Costs are floored at 1 so that an instance solved at the starting point
/// compares as ratio 1 rather than 0/0. For every method the curve is
/// evaluated at each distinct finite ratio observed across all methods;
/// unsolved instances have ratio infinity and never count.
pub fn profile_from_costs(entries: &[ProfileEntry]) -> Result<Vec<ProfilePoint>> {
    if entries.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut table: BTreeMap<&str, BTreeMap<&str, Option<f64>>> = BTreeMap::new();
    let mut methods = BTreeSet::new();
    for e in entries {
        methods.insert(e.method.as_str());
        let row = table.entry(e.instance.as_str()).or_default();
        if row.insert(e.method.as_str(), e.cost).is_some() {
            return Err(Error::Config(format!(
                "duplicate profile entry for `{}` on `{}`",
                e.method, e.instance
            )));
        }
    }
    for (inst, row) in &table {
        if row.len() != methods.len() {
            return Err(Error::Config(format!("instance `{inst}` is missing some methods")));
        }
    }

    let mut ratios: BTreeMap<&str, Vec<f64>> = methods.iter().map(|m| (*m, Vec::new())).collect();
    for row in table.values() {
        let best = row.values().flatten().map(|c| c.max(1.0)).fold(f64::INFINITY, f64::min);
        for (m, c) in row {
            let r = match c {
                Some(c) if best.is_finite() => c.max(1.0) / best,
                _ => f64::INFINITY,
            };
            ratios.get_mut(m).unwrap().push(r);
        }
    }
    let mut breaks: Vec<f64> = ratios.values().flatten().copied().filter(|r| r.is_finite()).collect();
    breaks.push(1.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let n = table.len() as f64;
    let mut out = Vec::new();
    for (m, rs) in &ratios {
        for &tau in &breaks {
            out.push(ProfilePoint {
                method: m.to_string(),
                ratio: tau,
                fraction_solved: rs.iter().filter(|&&r| r <= tau).count() as f64 / n,
            });
        }
    }
    Ok(out)
}

/// A run's residual trace tagged for profiling.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRun<'a> {
    pub problem: String,
    /// Distinguishes repeated runs of one problem, e.g. the seed.
    pub instance: String,
    pub method: String,
    /// True KKT residuals, starting at `x_0`.
    pub kkt_trace: &'a [f64],
}

/// Profile over the convergence metric. The cost of a run is the first index
/// meeting the metric with `kkt0` its own starting residual and `kkt_best`
/// the per-problem reference; problems missing from `kkt_best` use the best
/// residual among the given runs.
pub fn performance_profile(
    runs: &[ProfileRun],
    kkt_best: &BTreeMap<String, f64>,
    eps_pp: f64,
) -> Result<Vec<ProfilePoint>> {
    if runs.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut best = BTreeMap::new();
    for r in runs {
        let b = r.kkt_trace.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
        let e = best.entry(r.problem.clone()).or_insert(f64::INFINITY);
        *e = f64::min(*e, b);
    }
    for (p, b) in kkt_best {
        if best.contains_key(p) {
            best.insert(p.clone(), *b);
        }
    }
    let entries: Vec<ProfileEntry> = runs
        .iter()
        .map(|r| {
            let cost = r.kkt_trace.first().and_then(|&k0| {
                convergence_index(r.kkt_trace, k0, best[&r.problem], eps_pp).map(|k| k as f64)
            });
            ProfileEntry {
                instance: format!("{}#{}", r.problem, r.instance),
                method: r.method.clone(),
                cost,
            }
        })
        .collect();
    profile_from_costs(&entries)
}
