//! Experiment harness: stopping-time sweeps, aggregation over seeds,
//! performance profiles and accuracy-event statistics.
//!
//! Everything here is batch oriented. A sweep is described by an
//! [`ExperimentSpec`] (usually read from a TOML file), every
//! `(problem, method, eps, seed)` cell is an independent solver run, and the
//! results come back as flat rows ready for CSV.

mod profile;
mod stats;
mod table;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::{EstimationMode, NoiseFamily, NoiseModel, OracleConfig};
use crate::problem::{catalog_keys, make_problem, manifest, ProblemManifestEntry};
use crate::solver::{self, HessianStrategy, RunRecord, SolverConfig};

pub use profile::{
    convergence_index, convergence_metric, performance_profile, profile_from_costs, ProfileEntry,
    ProfilePoint, ProfileRun,
};
pub use stats::{classification_stats, wilson_interval, ClassificationRow, Frequency};
pub use table::{
    aggregate_rows, profile_from_results, read_profile_csv, read_results_csv, trace_rows,
    write_profile_csv, write_results_csv, write_trace_csv, ProfileRow, ResultRow, TraceRow,
    RESULT_COLUMNS, TRACE_COLUMNS,
};

/// One solver/oracle configuration in a sweep.
///
/// Flat on purpose: each field maps to one key of a `[[method]]` table. The
/// irreducible levels switch injection on as soon as any of them is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSpec {
    pub label: String,
    pub alpha: u8,
    pub hessian: HessianStrategy,
    pub noise: NoiseFamily,
    pub sigma: f64,
    pub mode: EstimationMode,
    pub eps_f: f64,
    pub eps_g: f64,
    pub eps_h: f64,
    pub max_iter: usize,
    pub soc: bool,
    /// Fixed `|H_bar|` bound for the diagnostics; calibrated per problem when absent.
    pub kappa_b: Option<f64>,
    /// Shared failure probability `p_f = p_g = p_h`.
    pub p: f64,
    /// Shared batch constant `C_f = C_g = C_h`.
    pub c: f64,
    /// Shared `kappa_f = kappa_g = kappa_h`.
    pub kappa: f64,
    pub n_max: usize,
}

impl Default for MethodSpec {
    fn default() -> Self {
        let o = OracleConfig::default();
        Self {
            label: "Id".into(),
            alpha: 0,
            hessian: HessianStrategy::Id,
            noise: o.noise.family,
            sigma: o.noise.sigma,
            mode: o.mode,
            eps_f: 0.0,
            eps_g: 0.0,
            eps_h: 0.0,
            max_iter: SolverConfig::default().max_iter,
            soc: true,
            kappa_b: None,
            p: o.p_f,
            c: o.c_f,
            kappa: o.kappa_f,
            n_max: o.n_max,
        }
    }
}

impl MethodSpec {
    pub fn new(label: &str, alpha: u8, hessian: HessianStrategy) -> Self {
        Self {
            label: label.into(),
            alpha,
            hessian,
            ..Self::default()
        }
    }

    pub fn with_irreducible(mut self, eps_f: f64, eps_g: f64, eps_h: f64) -> Self {
        self.eps_f = eps_f;
        self.eps_g = eps_g;
        self.eps_h = eps_h;
        self
    }

    pub fn solver_config(&self, eps: f64) -> SolverConfig {
        SolverConfig {
            alpha: self.alpha,
            hessian: self.hessian,
            max_iter: self.max_iter,
            eps_stop: eps,
            kappa_b: self.kappa_b,
            soc_enabled: self.soc,
            ..SolverConfig::default()
        }
    }

    pub fn oracle_config(&self) -> OracleConfig {
        let base = OracleConfig {
            kappa_f: self.kappa,
            kappa_g: self.kappa,
            kappa_h: self.kappa,
            p_f: self.p,
            p_g: self.p,
            p_h: self.p,
            c_f: self.c,
            c_g: self.c,
            c_h: self.c,
            n_max: self.n_max,
            mode: self.mode,
            noise: NoiseModel::new(self.noise, self.sigma),
            ..OracleConfig::default()
        };
        if self.eps_f > 0.0 || self.eps_g > 0.0 || self.eps_h > 0.0 {
            base.with_irreducible(self.eps_f, self.eps_g, self.eps_h)
        } else {
            base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label.trim().is_empty() {
            return Err(Error::Config("method label must not be empty".into()));
        }
        if self.label.contains(',') {
            return Err(Error::Config(format!("method label `{}` contains a comma", self.label)));
        }
        self.solver_config(1.0).validate()?;
        self.oracle_config().validate()
    }
}

/// Where a sweep writes its files. Missing entries are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub results: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problems: Vec<String>,
    #[serde(rename = "method")]
    pub methods: Vec<MethodSpec>,
    pub eps_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Tolerance of the profile convergence metric.
    pub eps_pp: f64,
    pub outputs: Outputs,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            problems: Vec::new(),
            methods: Vec::new(),
            eps_grid: Vec::new(),
            seeds: (0..5).collect(),
            eps_pp: 1e-3,
            outputs: Outputs::default(),
        }
    }
}

/// Default irreducible levels `(eps, eps_f, eps_g, eps_h)` of the noise-floor presets.
pub const IRREDUCIBLE_DEFAULTS: (f64, f64, f64, f64) = (1e-2, 1e-4, 1e-2, 1e-2);

/// Names accepted by [`ExperimentSpec::preset`].
pub const PRESETS: &[&str] = &[
    "first-order-scaling",
    "irreducible-eps",
    "irreducible-eps-f",
    "irreducible-eps-g",
    "irreducible-eps-h",
];

/// The five methods compared throughout: four Hessian strategies targeting
/// first-order points plus the second-order variant with estimated Hessians.
pub fn standard_methods(eps_f: f64, eps_g: f64, eps_h: f64) -> Vec<MethodSpec> {
    [
        ("Id", 0, HessianStrategy::Id),
        ("SR1", 0, HessianStrategy::Sr1),
        ("EstH", 0, HessianStrategy::EstH),
        ("AveH", 0, HessianStrategy::AveH),
        ("SO-EstH", 1, HessianStrategy::EstH),
    ]
    .into_iter()
    .map(|(l, a, h)| MethodSpec::new(l, a, h).with_irreducible(eps_f, eps_g, eps_h))
    .collect()
}

impl ExperimentSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.problems.is_empty() {
            return Err(Error::Config("`problems` must not be empty".into()));
        }
        for p in &self.problems {
            if !catalog_keys().contains(&p.as_str()) {
                return Err(Error::UnknownProblem(p.clone()));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one [[method]] is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Config("`eps_grid` must be a nonempty list of positive values".into()));
        }
        if !(self.eps_pp > 0.0 && self.eps_pp < 1.0) {
            return Err(Error::Config(format!("eps_pp must lie in (0, 1), got {}", self.eps_pp)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.methods {
            m.validate()?;
            if !seen.insert(method_key(m)) {
                return Err(Error::Config(format!(
                    "method `{}` appears twice with the same irreducible levels",
                    m.label
                )));
            }
        }
        Ok(())
    }

    /// Named sweep presets. The irreducible presets hold the default levels
    /// fixed and vary one of `eps`, `eps_f`, `eps_g`, `eps_h` over a decade
    /// either side.
    pub fn preset(name: &str) -> Result<Self> {
        let (eps, ef, eg, eh) = IRREDUCIBLE_DEFAULTS;
        let problems: Vec<String> = crate::problem::benchmark_keys().iter().map(|s| s.to_string()).collect();
        let base = Self {
            problems,
            ..Self::default()
        };
        let spec = match name {
            "first-order-scaling" => Self {
                methods: vec![MethodSpec::new("Id", 0, HessianStrategy::Id)],
                eps_grid: vec![1e-1, 1e-2, 1e-3],
                ..base
            },
            "irreducible-eps" => Self {
                methods: standard_methods(ef, eg, eh),
                eps_grid: vec![1e-1, 1e-2, 1e-3],
                ..base
            },
            "irreducible-eps-f" => Self {
                methods: [1e-3, 1e-4, 1e-5].iter().flat_map(|&v| standard_methods(v, eg, eh)).collect(),
                eps_grid: vec![eps],
                ..base
            },
            "irreducible-eps-g" => Self {
                methods: [1e-1, 1e-2, 1e-3].iter().flat_map(|&v| standard_methods(ef, v, eh)).collect(),
                eps_grid: vec![eps],
                ..base
            },
            "irreducible-eps-h" => Self {
                methods: [1e-1, 1e-2, 1e-3].iter().flat_map(|&v| standard_methods(ef, eg, v)).collect(),
                eps_grid: vec![eps],
                ..base
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Identity of a method inside a sweep: label plus irreducible levels.
fn method_key(m: &MethodSpec) -> (String, u64, u64, u64) {
    (m.label.clone(), m.eps_f.to_bits(), m.eps_g.to_bits(), m.eps_h.to_bits())
}

/// One finished `(problem, method, eps, seed)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub problem_idx: usize,
    pub method_idx: usize,
    pub eps_idx: usize,
    pub seed_idx: usize,
    pub row: ResultRow,
    /// True KKT residual at every visited iterate, for the profile metric.
    pub kkt_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    /// Per-seed rows followed by `mean` and `median` rows for each group, in
    /// canonical (problem, method, eps, seed) order.
    pub rows: Vec<ResultRow>,
    pub cells: Vec<Cell>,
}

impl ExperimentOutput {
    pub fn seed_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| !r.is_aggregate())
    }

    pub fn errors(&self) -> usize {
        self.seed_rows().filter(|r| r.status.starts_with("Error")).count()
    }
}

/// Per-method `|H_bar|` bound used for the accuracy diagnostics of a problem:
/// the configured value, or `1 + max |H_bar|` over a noise-free run.
pub fn resolve_kappa_b(problem: &str, m: &MethodSpec, eps: f64) -> Option<f64> {
    if m.kappa_b.is_some() {
        return m.kappa_b;
    }
    let p = make_problem(problem).ok()?;
    match solver::calibrate_kappa_b(&p, &m.solver_config(eps)) {
        Ok(kb) if kb.is_finite() => Some(kb),
        _ => None,
    }
}

/// Runs every cell of `spec` (in parallel) and returns rows in canonical order.
///
/// Solver failures become rows with an `Error(..)` status; only an invalid
/// spec aborts the sweep.
pub fn stopping_time_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let min_eps = spec.eps_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let kappa: BTreeMap<(usize, usize), Option<f64>> = (0..spec.problems.len())
        .flat_map(|pi| (0..spec.methods.len()).map(move |mi| (pi, mi)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(pi, mi)| ((pi, mi), resolve_kappa_b(&spec.problems[pi], &spec.methods[mi], min_eps)))
        .collect();

    let mut jobs = Vec::new();
    for pi in 0..spec.problems.len() {
        for mi in 0..spec.methods.len() {
            for ei in 0..spec.eps_grid.len() {
                for si in 0..spec.seeds.len() {
                    jobs.push((pi, mi, ei, si));
                }
            }
        }
    }
    let mut cells: Vec<Cell> = jobs
        .into_par_iter()
        .map(|(pi, mi, ei, si)| {
            let method = MethodSpec {
                kappa_b: kappa[&(pi, mi)],
                ..spec.methods[mi].clone()
            };
            run_cell(&spec.problems[pi], &method, spec.eps_grid[ei], spec.seeds[si])
                .map(|(row, kkt_trace)| Cell {
                    problem_idx: pi,
                    method_idx: mi,
                    eps_idx: ei,
                    seed_idx: si,
                    row,
                    kkt_trace,
                })
        })
        .collect::<Result<_>>()?;
    cells.sort_by_key(|c| (c.problem_idx, c.method_idx, c.eps_idx, c.seed_idx));

    let mut rows = Vec::with_capacity(cells.len() + cells.len() / spec.seeds.len() * 2);
    for group in cells.chunks(spec.seeds.len()) {
        let seed_rows: Vec<ResultRow> = group.iter().map(|c| c.row.clone()).collect();
        rows.extend(seed_rows.iter().cloned());
        rows.extend(aggregate_rows(&seed_rows));
    }
    Ok(ExperimentOutput { rows, cells })
}

fn run_cell(problem: &str, m: &MethodSpec, eps: f64, seed: u64) -> Result<(ResultRow, Vec<f64>)> {
    let p = make_problem(problem)?;
    let rec = solver::run(&p, &m.oracle_config(), &m.solver_config(eps), seed)?;
    log::debug!(
        "{problem} / {} / eps {eps:e} / seed {seed}: {} after {} iterations",
        m.label,
        rec.status.label(),
        rec.iters()
    );
    Ok((ResultRow::from_record(&rec, &m.label, eps), rec.kkt_trace()))
}

/// Best true KKT residual per problem over noise-free reference runs of every
/// method (irreducible injection off, stopping at the smallest `eps`).
pub fn reference_best_kkt(spec: &ExperimentSpec) -> Result<BTreeMap<String, f64>> {
    spec.validate()?;
    let min_eps = spec.eps_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let mut jobs = Vec::new();
    for p in &spec.problems {
        for m in &spec.methods {
            for s in &spec.seeds {
                jobs.push((p.clone(), m.clone().with_irreducible(0.0, 0.0, 0.0), *s));
            }
        }
    }
    let best: Vec<(String, f64)> = jobs
        .into_par_iter()
        .map(|(p, m, s)| {
            let (_, trace) = run_cell(&p, &m, min_eps, s)?;
            let b = trace.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
            Ok((p, b))
        })
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for (p, b) in best {
        let e = out.entry(p).or_insert(f64::INFINITY);
        *e = f64::min(*e, b);
    }
    Ok(out)
}

/// Profile points of a finished sweep, one curve set per
/// `(eps, eps_f, eps_g, eps_h)` setting; instances are `(problem, seed)` pairs.
///
/// `kkt_best` supplies the per-problem reference residual; the best value seen
/// in the sweep itself is folded in, so the metric is always attainable.
pub fn sweep_profile(
    spec: &ExperimentSpec,
    out: &ExperimentOutput,
    kkt_best: &BTreeMap<String, f64>,
) -> Result<Vec<ProfileRow>> {
    let mut groups: BTreeMap<(u64, u64, u64, u64), Vec<&Cell>> = BTreeMap::new();
    for c in &out.cells {
        let r = &c.row;
        groups
            .entry((r.eps.to_bits(), r.eps_f.to_bits(), r.eps_g.to_bits(), r.eps_h.to_bits()))
            .or_default()
            .push(c);
    }
    let mut rows = Vec::new();
    for cells in groups.values() {
        let r0 = &cells[0].row;
        let mut best = kkt_best.clone();
        for c in cells {
            let b = c.kkt_trace.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
            let e = best.entry(c.row.problem.clone()).or_insert(f64::INFINITY);
            *e = e.min(b);
        }
        let runs: Vec<ProfileRun> = cells
            .iter()
            .map(|c| ProfileRun {
                problem: c.row.problem.clone(),
                instance: c.row.seed.clone(),
                method: c.row.method.clone(),
                kkt_trace: &c.kkt_trace,
            })
            .collect();
        for pt in performance_profile(&runs, &best, spec.eps_pp)? {
            rows.push(ProfileRow {
                eps: r0.eps,
                eps_f: r0.eps_f,
                eps_g: r0.eps_g,
                eps_h: r0.eps_h,
                method: pt.method,
                ratio: pt.ratio,
                fraction_solved: pt.fraction_solved,
            });
        }
    }
    Ok(rows)
}

/// Machine-readable summary written next to the results table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepManifest {
    pub generator: String,
    pub spec: ExperimentSpec,
    pub problems: Vec<ProblemManifestEntry>,
    pub result_columns: Vec<&'static str>,
    pub rows: usize,
    pub cells: usize,
    pub stopped: usize,
    pub budget_exhausted: usize,
    pub errors: usize,
}

pub fn sweep_manifest(spec: &ExperimentSpec, out: &ExperimentOutput) -> SweepManifest {
    let count = |s: &str| out.seed_rows().filter(|r| r.status == s).count();
    SweepManifest {
        generator: format!("trssqp {}", env!("CARGO_PKG_VERSION")),
        spec: spec.clone(),
        problems: manifest().into_iter().filter(|e| spec.problems.contains(&e.name)).collect(),
        result_columns: RESULT_COLUMNS.to_vec(),
        rows: out.rows.len(),
        cells: out.cells.len(),
        stopped: count("Stopped"),
        budget_exhausted: count("BudgetExhausted"),
        errors: out.errors(),
    }
}

/// Records of single runs, kept for the statistics helpers.
pub fn run_method(problem: &str, m: &MethodSpec, eps: f64, seed: u64) -> Result<RunRecord> {
    let p = make_problem(problem)?;
    solver::run(&p, &m.oracle_config(), &m.solver_config(eps), seed)
}
