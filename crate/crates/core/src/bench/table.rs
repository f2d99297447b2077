//! CSV tables: sweep results, per-iteration traces and profile curves.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::profile::{profile_from_costs, ProfileEntry};
use crate::error::Result;
use crate::solver::{RunRecord, RunStatus};

pub const RESULT_COLUMNS: [&str; 17] = [
    "problem",
    "method",
    "alpha",
    "eps",
    "eps_f",
    "eps_g",
    "eps_h",
    "noise",
    "seed",
    "T_eps",
    "status",
    "final_kkt",
    "final_tau_plus",
    "iters",
    "accept_rate",
    "freq_I",
    "freq_Theta",
];

pub const TRACE_COLUMNS: [&str; 16] = [
    "k",
    "delta",
    "mu",
    "kkt_true",
    "tau_plus_true",
    "step_kind",
    "soc",
    "accepted",
    "radius_grew",
    "pred",
    "ared",
    "A_k",
    "B_k",
    "C_k",
    "I_k",
    "n_samples",
];

const AGGREGATE: &str = "Aggregate";

/// One line of the results table. Per-seed rows carry the seed number;
/// aggregate rows carry `mean` or `median` and status `Aggregate`.
///
/// `T_eps` is the stopping time, or the iteration budget when the run did not
/// stop. The frequency columns are empty for runs with no iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub problem: String,
    pub method: String,
    pub alpha: u8,
    pub eps: f64,
    pub eps_f: f64,
    pub eps_g: f64,
    pub eps_h: f64,
    pub noise: String,
    pub seed: String,
    #[serde(rename = "T_eps")]
    pub t_eps: f64,
    pub status: String,
    pub final_kkt: f64,
    pub final_tau_plus: f64,
    pub iters: f64,
    pub accept_rate: Option<f64>,
    #[serde(rename = "freq_I")]
    pub freq_i: Option<f64>,
    #[serde(rename = "freq_Theta")]
    pub freq_theta: Option<f64>,
}

fn nonempty(v: f64) -> Option<f64> {
    if v.is_nan() {
        None
    } else {
        Some(v)
    }
}

impl ResultRow {
    pub fn from_record(rec: &RunRecord, method: &str, eps: f64) -> Self {
        let o = &rec.oracle;
        let (ef, eg, eh) = if o.irreducible_injection {
            (o.eps_f, o.eps_g, o.eps_h)
        } else {
            (0.0, 0.0, 0.0)
        };
        let accept = nonempty(rec.accept_rate());
        Self {
            problem: rec.problem.clone(),
            method: method.to_string(),
            alpha: rec.config.alpha,
            eps,
            eps_f: ef,
            eps_g: eg,
            eps_h: eh,
            noise: o.noise.family.to_string(),
            seed: rec.seed.to_string(),
            t_eps: rec.t_eps_or_budget() as f64,
            status: rec.status.label(),
            final_kkt: rec.final_kkt,
            final_tau_plus: rec.final_tau_plus,
            iters: rec.iters() as f64,
            accept_rate: accept,
            freq_i: nonempty(rec.freq_accurate()),
            freq_theta: accept,
        }
    }

    pub fn is_aggregate(&self) -> bool {
        self.status == AGGREGATE
    }

    pub fn run_status(&self) -> Option<RunStatus> {
        RunStatus::parse(&self.status)
    }

    pub fn converged(&self) -> bool {
        self.status == "Stopped"
    }
}

fn mean(mut v: Vec<f64>) -> f64 {
    // Sorting first makes the sum independent of seed order.
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn reduce(rows: &[ResultRow], pick: impl Fn(&ResultRow) -> f64, f: fn(Vec<f64>) -> f64) -> f64 {
    f(rows.iter().map(pick).collect())
}

fn reduce_opt(rows: &[ResultRow], pick: impl Fn(&ResultRow) -> Option<f64>, f: fn(Vec<f64>) -> f64) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(pick).collect();
    if v.is_empty() {
        None
    } else {
        Some(f(v))
    }
}

/// `mean` and `median` rows over the per-seed rows of one group.
pub fn aggregate_rows(group: &[ResultRow]) -> Vec<ResultRow> {
    let Some(first) = group.first() else {
        return Vec::new();
    };
    [("mean", mean as fn(Vec<f64>) -> f64), ("median", median)]
        .into_iter()
        .map(|(name, f)| ResultRow {
            seed: name.into(),
            status: AGGREGATE.into(),
            t_eps: reduce(group, |r| r.t_eps, f),
            final_kkt: reduce(group, |r| r.final_kkt, f),
            final_tau_plus: reduce(group, |r| r.final_tau_plus, f),
            iters: reduce(group, |r| r.iters, f),
            accept_rate: reduce_opt(group, |r| r.accept_rate, f),
            freq_i: reduce_opt(group, |r| r.freq_i, f),
            freq_theta: reduce_opt(group, |r| r.freq_theta, f),
            ..first.clone()
        })
        .collect()
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(RESULT_COLUMNS)?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    if headers.iter().ne(RESULT_COLUMNS) {
        return Err(crate::Error::Config(format!(
            "unexpected results header: {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rd.deserialize().map(|r| r.map_err(Into::into)).collect()
}

/// One line of a per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub delta: f64,
    pub mu: f64,
    pub kkt_true: f64,
    pub tau_plus_true: f64,
    pub step_kind: String,
    pub soc: bool,
    pub accepted: bool,
    pub radius_grew: bool,
    pub pred: f64,
    pub ared: f64,
    #[serde(rename = "A_k")]
    pub a_k: bool,
    #[serde(rename = "B_k")]
    pub b_k: bool,
    #[serde(rename = "C_k")]
    pub c_k: bool,
    #[serde(rename = "I_k")]
    pub i_k: bool,
    pub n_samples: usize,
}

pub fn trace_rows(rec: &RunRecord) -> Vec<TraceRow> {
    rec.logs
        .iter()
        .map(|l| TraceRow {
            k: l.k,
            delta: l.delta,
            mu: l.mu,
            kkt_true: l.kkt_true,
            tau_plus_true: l.tau_plus_true,
            step_kind: l.step_kind.as_str().to_string(),
            soc: l.soc_performed,
            accepted: l.accepted,
            radius_grew: l.radius_grew,
            pred: l.pred,
            ared: l.ared,
            a_k: l.events.a,
            b_k: l.events.b,
            c_k: l.events.c,
            i_k: l.accurate(),
            n_samples: l.n_samples,
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(rec: &RunRecord, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let rows = trace_rows(rec);
    if rows.is_empty() {
        wr.write_record(TRACE_COLUMNS)?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// One point of a profile curve within an `(eps, eps_f, eps_g, eps_h)` setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub eps: f64,
    pub eps_f: f64,
    pub eps_g: f64,
    pub eps_h: f64,
    pub method: String,
    pub ratio: f64,
    pub fraction_solved: f64,
}

pub fn write_profile_csv<W: Write>(rows: &[ProfileRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_profile_csv<R: Read>(r: R) -> Result<Vec<ProfileRow>> {
    csv::Reader::from_reader(r).deserialize().map(|r| r.map_err(Into::into)).collect()
}

/// Profile curves from a results table alone.
///
/// Without iteration traces the cost of an instance is its `T_eps` when the
/// run stopped and infinite otherwise; instances are `(problem, seed)` pairs
/// and curves are grouped by `(eps, eps_f, eps_g, eps_h)`.
pub fn profile_from_results(rows: &[ResultRow]) -> Result<Vec<ProfileRow>> {
    let mut groups: BTreeMap<(u64, u64, u64, u64), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.is_aggregate()) {
        groups
            .entry((r.eps.to_bits(), r.eps_f.to_bits(), r.eps_g.to_bits(), r.eps_h.to_bits()))
            .or_default()
            .push(r);
    }
    if groups.is_empty() {
        return Err(crate::Error::EmptyGroup);
    }
    let mut out = Vec::new();
    for g in groups.values() {
        let entries: Vec<ProfileEntry> = g
            .iter()
            .map(|r| ProfileEntry {
                instance: format!("{}#{}", r.problem, r.seed),
                method: r.method.clone(),
                cost: r.converged().then_some(r.t_eps),
            })
            .collect();
        for pt in profile_from_costs(&entries)? {
            out.push(ProfileRow {
                eps: g[0].eps,
                eps_f: g[0].eps_f,
                eps_g: g[0].eps_g,
                eps_h: g[0].eps_h,
                method: pt.method,
                ratio: pt.ratio,
                fraction_solved: pt.fraction_solved,
            });
        }
    }
    Ok(out)
}
