//! The trust-region SSQP driver.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, NullBasis};
use crate::merit::{self, MeritConfig};
use crate::oracles::{self, AccuracyEvents, OracleConfig, OracleTrace};
use crate::problem::ProblemModel;
use crate::steps::{self, StepInputs, StepKind, TangentialSolver};

/// Generator used for every solver run.
pub type SolverRng = ChaCha8Rng;

/// Relative threshold of the SR1 skip rule.
pub const SR1_SKIP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HessianStrategy {
    #[serde(rename = "id")]
    Id,
    #[serde(rename = "sr1")]
    Sr1,
    #[serde(rename = "esth")]
    EstH,
    #[serde(rename = "aveh")]
    AveH,
}

impl HessianStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            HessianStrategy::Id => "id",
            HessianStrategy::Sr1 => "sr1",
            HessianStrategy::EstH => "esth",
            HessianStrategy::AveH => "aveh",
        }
    }

    /// Whether the strategy draws a Hessian estimate every iteration.
    pub fn uses_hessian_oracle(self) -> bool {
        matches!(self, HessianStrategy::EstH | HessianStrategy::AveH)
    }
}

impl fmt::Display for HessianStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HessianStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "id" => Ok(HessianStrategy::Id),
            "sr1" => Ok(HessianStrategy::Sr1),
            "esth" => Ok(HessianStrategy::EstH),
            "aveh" => Ok(HessianStrategy::AveH),
            other => Err(Error::Config(format!("unknown Hessian strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// 0 targets first-order points, 1 second-order points.
    pub alpha: u8,
    pub mu0: f64,
    pub rho: f64,
    pub eta: f64,
    pub kappa_fcd: f64,
    pub mu_max: f64,
    pub gamma: f64,
    pub delta0: f64,
    pub delta_max: f64,
    /// Constraint-violation level below which a rejected step is retried with a SOC step.
    pub r: f64,
    pub hessian: HessianStrategy,
    pub aveh_window: usize,
    pub max_iter: usize,
    pub eps_stop: f64,
    /// Bound on `|H_bar|` used by the accuracy diagnostics when no Hessian
    /// estimate is drawn. `None` means the maximum observed over the run (at least 1).
    pub kappa_b: Option<f64>,
    /// Disabling this turns off the second-order correction retry.
    pub soc_enabled: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let m = MeritConfig::default();
        Self {
            alpha: 0,
            mu0: m.mu0,
            rho: m.rho,
            eta: m.eta,
            kappa_fcd: m.kappa_fcd,
            mu_max: m.mu_max,
            gamma: 1.5,
            delta0: 5.0,
            delta_max: 5.0,
            r: 0.01,
            hessian: HessianStrategy::Id,
            aveh_window: 50,
            max_iter: 100_000,
            eps_stop: 1e-6,
            kappa_b: None,
            soc_enabled: true,
        }
    }
}

impl SolverConfig {
    pub fn merit(&self) -> MeritConfig {
        MeritConfig {
            mu0: self.mu0,
            rho: self.rho,
            eta: self.eta,
            kappa_fcd: self.kappa_fcd,
            mu_max: self.mu_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.merit().validate()?;
        if self.alpha > 1 {
            return Err(Error::Config(format!("alpha must be 0 or 1, got {}", self.alpha)));
        }
        if !(self.gamma > 1.0) {
            return Err(Error::Config(format!("gamma must be > 1, got {}", self.gamma)));
        }
        if !(self.delta0 > 0.0 && self.delta0 <= self.delta_max && self.delta_max.is_finite()) {
            return Err(Error::Config("need 0 < delta0 <= delta_max".into()));
        }
        if !(self.r > 0.0) {
            return Err(Error::Config(format!("r must be > 0, got {}", self.r)));
        }
        if self.aveh_window == 0 {
            return Err(Error::Config("aveh_window must be >= 1".into()));
        }
        if !(self.eps_stop >= 0.0) {
            return Err(Error::Config("eps_stop must be >= 0".into()));
        }
        if let Some(kb) = self.kappa_b {
            if !(kb >= 1.0) {
                return Err(Error::Config(format!("kappa_b must be >= 1, got {kb}")));
            }
        }
        if self.alpha == 1 && !self.hessian.uses_hessian_oracle() {
            log::warn!(
                "alpha = 1 with Hessian strategy `{}`: curvature comes from a surrogate, not the Hessian oracle",
                self.hessian
            );
        }
        Ok(())
    }

    /// Whether `(kkt, tau_plus)` lies inside the stopping neighborhood.
    pub fn is_stationary(&self, kkt: f64, tau_plus: f64) -> bool {
        if self.alpha == 0 {
            kkt <= self.eps_stop
        } else {
            kkt.max(tau_plus) <= self.eps_stop
        }
    }
}

/// Solver state carried between iterations.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub k: usize,
    pub x: DVector<f64>,
    pub delta: f64,
    pub mu: f64,
    pub lambda_bar: DVector<f64>,
    pub gbar: DVector<f64>,
    pub grad_l: DVector<f64>,
    pub hbar: DMatrix<f64>,
    pub tau_bar: Option<f64>,
    pub tau_plus: f64,
    pub c: DVector<f64>,
    pub g_mat: DMatrix<f64>,
    pub basis: NullBasis,
    sr1_h: DMatrix<f64>,
    /// `(grad_x L_{k-1}, x_k - x_{k-1})` after an accepted step.
    sr1_pending: Option<(DVector<f64>, DVector<f64>)>,
    aveh: VecDeque<DMatrix<f64>>,
}

impl IterateState {
    pub fn new(p: &ProblemModel, cfg: &SolverConfig) -> Result<Self> {
        let x = p.x0.clone();
        let c = p.constraints(&x)?;
        let g_mat = p.jacobian(&x)?;
        let basis = linops::nullspace_basis(&g_mat)?;
        Ok(Self {
            k: 0,
            delta: cfg.delta0,
            mu: cfg.mu0,
            lambda_bar: DVector::zeros(p.m),
            gbar: DVector::zeros(p.d),
            grad_l: DVector::zeros(p.d),
            hbar: DMatrix::identity(p.d, p.d),
            tau_bar: None,
            tau_plus: 0.0,
            c,
            g_mat,
            basis,
            sr1_h: DMatrix::identity(p.d, p.d),
            sr1_pending: None,
            aveh: VecDeque::new(),
            x,
        })
    }
}

/// Everything recorded about one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub k: usize,
    pub step_kind: StepKind,
    pub tangential_solver: TangentialSolver,
    pub soc_performed: bool,
    /// Acceptance indicator.
    pub accepted: bool,
    pub radius_grew: bool,
    pub pred: f64,
    pub pred_threshold: f64,
    /// Whether escalation reached the threshold (false only when Pred cannot decrease in `mu`).
    pub threshold_met: bool,
    pub ared: f64,
    pub theta: f64,
    pub pred_nonnegative: bool,
    /// True residuals at `x_k`.
    pub kkt_true: f64,
    pub tau_plus_true: f64,
    pub delta: f64,
    pub delta_next: f64,
    /// Merit parameter before and after escalation.
    pub mu_in: f64,
    pub mu: f64,
    pub grad_l_norm: f64,
    pub c_norm: f64,
    pub hbar_norm: f64,
    pub tau_bar: Option<f64>,
    pub tau_plus_bar: f64,
    pub step_norm: f64,
    pub f_bar_k: f64,
    pub f_bar_s: f64,
    pub trace: OracleTrace,
    pub events: AccuracyEvents,
    pub n_samples: usize,
    pub constraint_evals: usize,
}

impl IterationLog {
    pub fn accurate(&self) -> bool {
        self.events.all()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Stopped,
    BudgetExhausted,
    Error(String),
}

impl RunStatus {
    pub fn label(&self) -> String {
        match self {
            RunStatus::Stopped => "Stopped".into(),
            RunStatus::BudgetExhausted => "BudgetExhausted".into(),
            RunStatus::Error(kind) => format!("Error({kind})"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Stopped" => Some(RunStatus::Stopped),
            "BudgetExhausted" => Some(RunStatus::BudgetExhausted),
            _ => s
                .strip_prefix("Error(")
                .and_then(|r| r.strip_suffix(')'))
                .map(|k| RunStatus::Error(k.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub problem: String,
    pub seed: u64,
    pub logs: Vec<IterationLog>,
    pub stopping_time: Option<usize>,
    pub status: RunStatus,
    pub error: Option<Error>,
    pub final_x: DVector<f64>,
    pub final_kkt: f64,
    pub final_tau_plus: f64,
    /// Value of the `|H_bar|` bound used by the accuracy diagnostics.
    pub kappa_b: f64,
    pub config: SolverConfig,
    pub oracle: OracleConfig,
}

impl RunRecord {
    pub fn iters(&self) -> usize {
        self.logs.len()
    }

    /// `T_eps`, or the budget when the run never stopped.
    pub fn t_eps_or_budget(&self) -> usize {
        self.stopping_time.unwrap_or(self.config.max_iter)
    }

    fn freq(&self, pick: impl Fn(&IterationLog) -> bool) -> f64 {
        if self.logs.is_empty() {
            return f64::NAN;
        }
        self.logs.iter().filter(|l| pick(l)).count() as f64 / self.logs.len() as f64
    }

    pub fn accept_rate(&self) -> f64 {
        self.freq(|l| l.accepted)
    }

    pub fn freq_accurate(&self) -> f64 {
        self.freq(|l| l.accurate())
    }

    /// True KKT residuals at `x_0, x_1, ...` including the final iterate.
    pub fn kkt_trace(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.logs.iter().map(|l| l.kkt_true).collect();
        out.push(self.final_kkt);
        out
    }

    pub fn max_hbar_norm(&self) -> f64 {
        self.logs.iter().map(|l| l.hbar_norm).fold(0.0, f64::max)
    }
}

/// Outcome of [`hessian_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct HessianModel {
    pub hbar: DMatrix<f64>,
    pub tau_bar: Option<f64>,
    pub tau_plus: f64,
    pub hessian_error: Option<f64>,
    pub n_samples: usize,
}

/// SR1 update of `h` with the skip rule.
pub fn sr1_update(h: &DMatrix<f64>, y: &DVector<f64>, dx: &DVector<f64>) -> DMatrix<f64> {
    let r = y - h * dx;
    let denom = r.dot(dx);
    let dn = dx.norm();
    if dn == 0.0 || denom.abs() < SR1_SKIP_TOL * r.norm() * dn || r.norm() == 0.0 {
        return h.clone();
    }
    let upd = h + (&r * r.transpose()) / denom;
    linops::symmetrize(&upd)
}

/// Builds `H_bar` for the current iterate and its reduced curvature.
#[allow(clippy::too_many_arguments)]
pub fn hessian_model<R: Rng + ?Sized>(
    state: &mut IterateState,
    p: &ProblemModel,
    lambda_bar: &DVector<f64>,
    grad_l: &DVector<f64>,
    ocfg: &OracleConfig,
    scfg: &SolverConfig,
    rng: &mut R,
) -> Result<HessianModel> {
    let mut hessian_error = None;
    let mut n_samples = 0;
    let hbar = match scfg.hessian {
        HessianStrategy::Id => DMatrix::identity(p.d, p.d),
        HessianStrategy::Sr1 => {
            if let Some((prev_grad, dx)) = state.sr1_pending.take() {
                let y = grad_l - prev_grad;
                state.sr1_h = sr1_update(&state.sr1_h, &y, &dx);
            }
            state.sr1_h.clone()
        }
        HessianStrategy::EstH | HessianStrategy::AveH => {
            let est = oracles::estimate_hessian(p, &state.x, state.delta, ocfg, rng)?;
            hessian_error = Some(est.true_error);
            n_samples += est.n_samples;
            let lag = linops::symmetrize(&(est.value + p.weighted_constraint_hessian(&state.x, lambda_bar)?));
            if scfg.hessian == HessianStrategy::EstH {
                lag
            } else {
                state.aveh.push_back(lag);
                while state.aveh.len() > scfg.aveh_window {
                    state.aveh.pop_front();
                }
                let mut acc = DMatrix::zeros(p.d, p.d);
                for h in &state.aveh {
                    acc += h;
                }
                acc / state.aveh.len() as f64
            }
        }
    };
    let (tau_bar, tau_plus) = if scfg.alpha == 1 {
        match linops::reduced_min_eigenpair(&hbar, &state.basis) {
            Ok((tau, _)) => (Some(tau), (-tau).max(0.0)),
            Err(Error::EmptyNullSpace) => (None, 0.0),
            Err(e) => return Err(e),
        }
    } else {
        (None, 0.0)
    };
    Ok(HessianModel {
        hbar,
        tau_bar,
        tau_plus,
        hessian_error,
        n_samples,
    })
}

/// Runs one iteration from `state`, updating it in place.
pub fn iterate_once<R: Rng + ?Sized>(
    state: &mut IterateState,
    p: &ProblemModel,
    ocfg: &OracleConfig,
    scfg: &SolverConfig,
    rng: &mut R,
) -> Result<IterationLog> {
    let (kkt_true, tau_plus_true) = p.kkt_residual_true(&state.x)?;
    iterate_with_truth(state, p, ocfg, scfg, rng, kkt_true, tau_plus_true)
}

fn iterate_with_truth<R: Rng + ?Sized>(
    state: &mut IterateState,
    p: &ProblemModel,
    ocfg: &OracleConfig,
    scfg: &SolverConfig,
    rng: &mut R,
    kkt_true: f64,
    tau_plus_true: f64,
) -> Result<IterationLog> {
    let alpha = scfg.alpha;
    let delta = state.delta;
    let mut n_samples = 0;
    let mut constraint_evals = 0;
    let mut trace = OracleTrace::default();

    let grad = oracles::estimate_gradient(p, &state.x, delta, alpha, ocfg, rng)?;
    trace.gradient_error = Some(grad.true_error);
    n_samples += grad.n_samples;
    let gbar = grad.value;
    let lambda_bar = linops::least_squares_multiplier(&state.g_mat, &gbar)?;
    let grad_l = &gbar + state.g_mat.transpose() * &lambda_bar;
    let c_norm = state.c.norm();
    let grad_l_norm = grad_l.norm().hypot(c_norm);

    let hm = hessian_model(state, p, &lambda_bar, &grad_l, ocfg, scfg, rng)?;
    trace.hessian_error = hm.hessian_error;
    n_samples += hm.n_samples;
    let hbar = hm.hbar;
    let h_norm = linops::spectral_norm(&hbar);
    trace.hbar_norm = Some(h_norm);
    let tau_plus = hm.tau_plus;

    let kind = steps::choose_step_kind(grad_l_norm, delta, h_norm, tau_plus, c_norm);
    let v = linops::newton_normal_direction(&state.g_mat, &state.c)?;
    let inputs = StepInputs {
        basis: &state.basis,
        h: &hbar,
        gbar: &gbar,
        grad_l: &grad_l,
        c: &state.c,
        v: &v,
        delta,
        g_norm: linops::operator_norm(&state.g_mat),
        h_norm,
        tau_plus,
        kappa_fcd: scfg.kappa_fcd,
    };
    let mut bundle = steps::build_step(kind, &inputs)?;

    let mu_in = state.mu;
    let up = merit::update_merit_param(
        &gbar,
        &hbar,
        &bundle.dx,
        &state.c,
        &state.g_mat,
        grad_l_norm,
        h_norm,
        tau_plus,
        delta,
        mu_in,
        &scfg.merit(),
    )?;
    bundle.pred = Some(up.pred);
    let mu = up.mu;

    let f_k = oracles::estimate_value(p, &state.x, delta, alpha, ocfg, rng)?;
    n_samples += f_k.n_samples;
    trace.value_errors.push(f_k.true_error);
    let mut x_s = &state.x + &bundle.dx;
    let mut f_s = oracles::estimate_value(p, &x_s, delta, alpha, ocfg, rng)?;
    n_samples += f_s.n_samples;
    trace.value_errors.push(f_s.true_error);
    let mut c_s = p.constraints(&x_s)?;
    constraint_evals += 1;

    let theta = merit::theta(alpha, ocfg.eps_f, ocfg.eps_g);
    let mut ared = merit::ared(f_s.value, f_k.value, &c_s, &state.c, mu);
    let pred_nonnegative = !(up.pred < 0.0);
    let mut accepted = merit::accept_step(ared, up.pred, alpha, ocfg.eps_f, ocfg.eps_g, scfg.eta);

    let mut soc_performed = false;
    if !accepted && alpha == 1 && scfg.soc_enabled && c_norm <= scfg.r {
        let d = steps::soc_step(p, &state.x, &bundle.dx, &state.g_mat, &state.c)?;
        constraint_evals += 1;
        soc_performed = true;
        x_s = &state.x + &bundle.dx + &d;
        f_s = oracles::estimate_value(p, &x_s, delta, alpha, ocfg, rng)?;
        n_samples += f_s.n_samples;
        trace.value_errors.push(f_s.true_error);
        c_s = p.constraints(&x_s)?;
        constraint_evals += 1;
        ared = merit::ared(f_s.value, f_k.value, &c_s, &state.c, mu);
        accepted = merit::accept_step(ared, up.pred, alpha, ocfg.eps_f, ocfg.eps_g, scfg.eta);
        bundle.soc = Some(d);
    }

    let mut radius_grew = false;
    let delta_next;
    let step_norm = (&x_s - &state.x).norm();
    if accepted {
        radius_grew = merit::radius_growth_test(grad_l_norm, h_norm, tau_plus, scfg.eta, delta);
        delta_next = if radius_grew {
            (scfg.gamma * delta).min(scfg.delta_max)
        } else {
            delta / scfg.gamma
        };
        let g_next = p.jacobian(&x_s)?;
        let basis_next = linops::nullspace_basis(&g_next)?;
        state.sr1_pending = Some((grad_l.clone(), &x_s - &state.x));
        state.x = x_s;
        state.c = c_s;
        state.g_mat = g_next;
        state.basis = basis_next;
    } else {
        delta_next = delta / scfg.gamma;
        state.sr1_pending = None;
    }

    let events = oracles::accuracy_events(
        &trace,
        delta,
        alpha,
        ocfg,
        Some(scfg.kappa_b.unwrap_or(f64::INFINITY)),
    )?;

    let log = IterationLog {
        k: state.k,
        step_kind: kind,
        tangential_solver: bundle.solver,
        soc_performed,
        accepted,
        radius_grew,
        pred: up.pred,
        pred_threshold: up.threshold,
        threshold_met: up.threshold_met,
        ared,
        theta,
        pred_nonnegative,
        kkt_true,
        tau_plus_true,
        delta,
        delta_next,
        mu_in,
        mu,
        grad_l_norm,
        c_norm,
        hbar_norm: h_norm,
        tau_bar: hm.tau_bar,
        tau_plus_bar: tau_plus,
        step_norm,
        f_bar_k: f_k.value,
        f_bar_s: f_s.value,
        trace,
        events,
        n_samples,
        constraint_evals,
    };

    state.k += 1;
    state.delta = delta_next;
    state.mu = mu;
    state.lambda_bar = lambda_bar;
    state.gbar = gbar;
    state.grad_l = grad_l;
    state.hbar = hbar;
    state.tau_bar = hm.tau_bar;
    state.tau_plus = tau_plus;
    Ok(log)
}

/// Runs the solver from `p.x0` with a generator seeded by `seed`.
pub fn run(p: &ProblemModel, ocfg: &OracleConfig, scfg: &SolverConfig, seed: u64) -> Result<RunRecord> {
    let mut rng = SolverRng::seed_from_u64(seed);
    run_with_rng(p, ocfg, scfg, seed, &mut rng)
}

/// As [`run`], drawing from a caller-supplied generator.
///
/// Configuration errors are returned; failures during the iteration end the
/// run with an `Error` status and the log collected so far.
pub fn run_with_rng<R: Rng + ?Sized>(
    p: &ProblemModel,
    ocfg: &OracleConfig,
    scfg: &SolverConfig,
    seed: u64,
    rng: &mut R,
) -> Result<RunRecord> {
    scfg.validate()?;
    ocfg.validate()?;
    let mut logs = Vec::new();
    let mut stopping_time = None;
    let mut error = None;
    let mut final_kkt = f64::NAN;
    let mut final_tau_plus = f64::NAN;
    let mut x = p.x0.clone();

    let status = match IterateState::new(p, scfg) {
        Err(e) => {
            error = Some(e);
            RunStatus::Error(error.as_ref().unwrap().kind().into())
        }
        Ok(mut state) => loop {
            x = state.x.clone();
            let (kkt, tau_plus) = match p.kkt_residual_true(&state.x) {
                Ok(v) => v,
                Err(e) => {
                    let kind = e.kind().to_string();
                    error = Some(e);
                    break RunStatus::Error(kind);
                }
            };
            final_kkt = kkt;
            final_tau_plus = tau_plus;
            if scfg.is_stationary(kkt, tau_plus) {
                stopping_time = Some(state.k);
                break RunStatus::Stopped;
            }
            if state.k >= scfg.max_iter {
                break RunStatus::BudgetExhausted;
            }
            // A rejection from here would leave the normal range, where the
            // radius stops following the gamma ladder exactly.
            if state.delta / scfg.gamma < f64::MIN_POSITIVE {
                let e = Error::RadiusUnderflow { delta: state.delta };
                error = Some(e);
                break RunStatus::Error("RadiusUnderflow".into());
            }
            match iterate_with_truth(&mut state, p, ocfg, scfg, rng, kkt, tau_plus) {
                Ok(log) => logs.push(log),
                Err(e) => {
                    log::debug!("run on {} aborted at k = {}: {e}", p.name, state.k);
                    let kind = e.kind().to_string();
                    error = Some(e);
                    break RunStatus::Error(kind);
                }
            }
        },
    };

    let max_h = logs.iter().map(|l| l.hbar_norm).fold(1.0, f64::max);
    Ok(RunRecord {
        problem: p.name.clone(),
        seed,
        logs,
        stopping_time,
        status,
        error,
        final_x: x,
        final_kkt,
        final_tau_plus,
        kappa_b: scfg.kappa_b.unwrap_or(max_h),
        config: scfg.clone(),
        oracle: ocfg.clone(),
    })
}

/// `1 + max |H_bar|` over a noise-free run with the same solver settings.
pub fn calibrate_kappa_b(p: &ProblemModel, scfg: &SolverConfig) -> Result<f64> {
    let cfg = SolverConfig {
        kappa_b: None,
        ..scfg.clone()
    };
    let rec = run(p, &OracleConfig::noiseless(), &cfg, 0)?;
    Ok(1.0 + rec.max_hbar_norm())
}
