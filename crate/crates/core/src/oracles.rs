//! Probabilistic zeroth-, first- and second-order oracles.
//!
//! Estimates are built from exact problem quantities plus additive noise:
//!
//! ```text
//!     F(x, xi)         = f(x)      + sigma * rand
//!     grad F(x, xi)    = grad f(x) + 1 * sigma * rand        (one scalar draw per sample)
//!     [hess F(x, xi)]ij = [hess f(x)]ij + sigma * rand       (independent per entry, mirrored)
//! ```
//!
//! optionally averaged over a Chebyshev-sized batch, plus an irreducible
//! term `delta * eps` with a fresh Rademacher sign `delta`. Each estimate
//! records its true error so iteration accuracy can be audited after the fact;
//! the solver never reads it.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal, StudentT, Weibull};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops;
use crate::problem::ProblemModel;

/// Degrees of freedom of the Student-t family.
pub const STUDENT_T_DOF: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseFamily {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "normal")]
    Gaussian,
    #[serde(rename = "t4")]
    StudentT,
    #[serde(rename = "lognormal")]
    LogNormalSym,
    #[serde(rename = "weibull")]
    WeibullSym,
}

impl NoiseFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseFamily::None => "none",
            NoiseFamily::Gaussian => "normal",
            NoiseFamily::StudentT => "t4",
            NoiseFamily::LogNormalSym => "lognormal",
            NoiseFamily::WeibullSym => "weibull",
        }
    }

    /// Families whose draws only have finitely many moments (or a heavy
    /// right tail before symmetrization).
    pub fn is_heavy_tailed(self) -> bool {
        matches!(
            self,
            NoiseFamily::StudentT | NoiseFamily::LogNormalSym | NoiseFamily::WeibullSym
        )
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseFamily::None),
            "normal" | "gaussian" => Ok(NoiseFamily::Gaussian),
            "t4" | "student-t" => Ok(NoiseFamily::StudentT),
            "lognormal" => Ok(NoiseFamily::LogNormalSym),
            "weibull" => Ok(NoiseFamily::WeibullSym),
            other => Err(Error::Config(format!("unknown noise family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    pub sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            family: NoiseFamily::Gaussian,
            sigma: 1e-2,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            family: NoiseFamily::None,
            sigma: 0.0,
        }
    }

    pub fn new(family: NoiseFamily, sigma: f64) -> Self {
        Self { family, sigma }
    }

    fn is_silent(&self) -> bool {
        self.family == NoiseFamily::None || self.sigma == 0.0
    }
}

/// Pre-built sampler for the standardized `rand` variable of a family.
enum Sampler {
    Gaussian,
    StudentT(StudentT<f64>),
    LogNormal(LogNormal<f64>),
    Weibull(Weibull<f64>),
}

impl Sampler {
    fn new(family: NoiseFamily) -> Option<Self> {
        match family {
            NoiseFamily::None => None,
            NoiseFamily::Gaussian => Some(Sampler::Gaussian),
            NoiseFamily::StudentT => Some(Sampler::StudentT(
                StudentT::new(STUDENT_T_DOF).expect("valid dof"),
            )),
            NoiseFamily::LogNormalSym => {
                Some(Sampler::LogNormal(LogNormal::new(0.0, 1.0).expect("valid lognormal")))
            }
            NoiseFamily::WeibullSym => {
                Some(Sampler::Weibull(Weibull::new(1.0, 1.0).expect("valid weibull")))
            }
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Gaussian => StandardNormal.sample(rng),
            Sampler::StudentT(d) => d.sample(rng),
            Sampler::LogNormal(d) => rademacher(rng) * d.sample(rng),
            Sampler::Weibull(d) => rademacher(rng) * d.sample(rng),
        }
    }

    fn mean<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> f64 {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += self.draw(rng);
        }
        acc / n as f64
    }
}

pub fn rademacher<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// One standardized noise draw (`rand`, before scaling by `sigma`).
pub fn draw_standardized<R: Rng + ?Sized>(family: NoiseFamily, rng: &mut R) -> f64 {
    Sampler::new(family).map_or(0.0, |s| s.draw(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimationMode {
    /// One draw per estimate.
    #[serde(rename = "inject")]
    DirectInject,
    /// Average over the Chebyshev sample size, capped at `n_max`.
    #[serde(rename = "average")]
    SampleAverage,
}

impl FromStr for EstimationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inject" => Ok(EstimationMode::DirectInject),
            "average" => Ok(EstimationMode::SampleAverage),
            other => Err(Error::Config(format!("unknown estimation mode `{other}`"))),
        }
    }
}

/// Oracle accuracy targets, failure probabilities, batch constants and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub eps_f: f64,
    pub eps_f_tilde: f64,
    pub eps_g: f64,
    pub eps_h: f64,
    pub kappa_f: f64,
    pub kappa_g: f64,
    pub kappa_h: f64,
    pub p_f: f64,
    pub p_g: f64,
    pub p_h: f64,
    pub c_f: f64,
    pub c_g: f64,
    pub c_h: f64,
    pub n_max: usize,
    pub mode: EstimationMode,
    pub noise: NoiseModel,
    pub irreducible_injection: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            eps_f: 0.0,
            eps_f_tilde: 0.0,
            eps_g: 0.0,
            eps_h: 0.0,
            kappa_f: 0.05,
            kappa_g: 0.05,
            kappa_h: 0.05,
            p_f: 0.1,
            p_g: 0.1,
            p_h: 0.1,
            c_f: 5.0,
            c_g: 5.0,
            c_h: 5.0,
            n_max: 10_000,
            mode: EstimationMode::DirectInject,
            noise: NoiseModel::default(),
            irreducible_injection: false,
        }
    }
}

impl OracleConfig {
    /// Exact oracles: no stochastic noise and no irreducible injection.
    pub fn noiseless() -> Self {
        Self {
            noise: NoiseModel::none(),
            ..Self::default()
        }
    }

    /// Sets `eps_f`, `eps_g`, `eps_h` (and `eps_f_tilde = eps_f`) and enables injection.
    pub fn with_irreducible(mut self, eps_f: f64, eps_g: f64, eps_h: f64) -> Self {
        self.eps_f = eps_f;
        self.eps_f_tilde = eps_f;
        self.eps_g = eps_g;
        self.eps_h = eps_h;
        self.irreducible_injection = true;
        self
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise.is_silent()
            && (!self.irreducible_injection
                || (self.eps_f == 0.0 && self.eps_g == 0.0 && self.eps_h == 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("eps_f", self.eps_f),
            ("eps_f_tilde", self.eps_f_tilde),
            ("eps_g", self.eps_g),
            ("eps_h", self.eps_h),
            ("kappa_f", self.kappa_f),
            ("kappa_g", self.kappa_g),
            ("kappa_h", self.kappa_h),
            ("sigma", self.noise.sigma),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.eps_f_tilde > self.eps_f {
            return Err(Error::Config("eps_f_tilde must not exceed eps_f".into()));
        }
        for (name, p) in [("p_f", self.p_f), ("p_g", self.p_g), ("p_h", self.p_h)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {p}")));
            }
        }
        for (name, c) in [("c_f", self.c_f), ("c_g", self.c_g), ("c_h", self.c_h)] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {c}")));
            }
        }
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be >= 1".into()));
        }
        if 1.0 - self.p_h - self.p_g - 2.0 * self.p_f <= 0.5 {
            log::warn!(
                "oracle failure probabilities leave P(accurate iteration) <= 1/2 (p_f = {}, p_g = {}, p_h = {})",
                self.p_f,
                self.p_g,
                self.p_h
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleOrder {
    Zeroth,
    First,
    Second,
}

impl OracleOrder {
    fn name(self) -> &'static str {
        match self {
            OracleOrder::Zeroth => "zeroth-order",
            OracleOrder::First => "first-order",
            OracleOrder::Second => "second-order",
        }
    }
}

/// Chebyshev batch size for an oracle at radius `delta`, capped at `cfg.n_max`.
///
/// A zero `eps_f_tilde` switches off the mean-error arm of the zeroth-order rule.
pub fn sample_size(order: OracleOrder, delta: f64, alpha: u8, cfg: &OracleConfig) -> Result<usize> {
    let a = i32::from(alpha);
    let (c, denom) = match order {
        OracleOrder::Second => (cfg.c_h, cfg.p_h * (cfg.eps_h + cfg.kappa_h * delta).powi(2)),
        OracleOrder::First => (
            cfg.c_g,
            cfg.p_g * (cfg.eps_g + cfg.kappa_g * delta.powi(a + 1)).powi(2),
        ),
        OracleOrder::Zeroth => {
            let prob_arm = cfg.p_f * (cfg.eps_f + cfg.kappa_f * delta.powi(a + 2)).powi(2);
            let denom = if cfg.eps_f_tilde > 0.0 {
                prob_arm.min(cfg.eps_f_tilde.powi(2))
            } else {
                prob_arm
            };
            (cfg.c_f, denom)
        }
    };
    if !(denom > 0.0) {
        return Err(Error::DegenerateOracle(order.name()));
    }
    let raw = (c / denom).ceil();
    let n = if raw >= cfg.n_max as f64 { cfg.n_max } else { raw as usize };
    Ok(n.max(1))
}

/// An oracle output together with its audit data.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub n_samples: usize,
    /// Absolute (norm) error against the noiseless quantity.
    pub true_error: f64,
}

fn batch(order: OracleOrder, delta: f64, alpha: u8, cfg: &OracleConfig) -> Result<usize> {
    match cfg.mode {
        EstimationMode::DirectInject => Ok(1),
        EstimationMode::SampleAverage => sample_size(order, delta, alpha, cfg),
    }
}

fn irreducible<R: Rng + ?Sized>(cfg: &OracleConfig, level: f64, rng: &mut R) -> f64 {
    if cfg.irreducible_injection && level > 0.0 {
        rademacher(rng) * level
    } else {
        0.0
    }
}

fn stochastic_mean<R: Rng + ?Sized>(cfg: &OracleConfig, n: usize, rng: &mut R) -> f64 {
    if cfg.noise.is_silent() {
        return 0.0;
    }
    let sampler = Sampler::new(cfg.noise.family).expect("non-silent family");
    cfg.noise.sigma * sampler.mean(n, rng)
}

pub fn estimate_value<R: Rng + ?Sized>(
    p: &ProblemModel,
    x: &DVector<f64>,
    delta: f64,
    alpha: u8,
    cfg: &OracleConfig,
    rng: &mut R,
) -> Result<Estimate<f64>> {
    let f = p.objective(x)?;
    let n = batch(OracleOrder::Zeroth, delta, alpha, cfg)?;
    let noise = stochastic_mean(cfg, n, rng);
    let value = f + noise + irreducible(cfg, cfg.eps_f, rng);
    Ok(Estimate {
        value,
        n_samples: n,
        true_error: (value - f).abs(),
    })
}

pub fn estimate_gradient<R: Rng + ?Sized>(
    p: &ProblemModel,
    x: &DVector<f64>,
    delta: f64,
    alpha: u8,
    cfg: &OracleConfig,
    rng: &mut R,
) -> Result<Estimate<DVector<f64>>> {
    let g = p.gradient(x)?;
    let n = batch(OracleOrder::First, delta, alpha, cfg)?;
    let shift = stochastic_mean(cfg, n, rng)
        + irreducible(cfg, cfg.eps_g, rng) / (p.d as f64).sqrt();
    let value = g.add_scalar(shift);
    let true_error = (&value - &g).norm();
    Ok(Estimate {
        value,
        n_samples: n,
        true_error,
    })
}

pub fn estimate_hessian<R: Rng + ?Sized>(
    p: &ProblemModel,
    x: &DVector<f64>,
    delta: f64,
    cfg: &OracleConfig,
    rng: &mut R,
) -> Result<Estimate<DMatrix<f64>>> {
    let h = p.hessian(x)?;
    let n = batch(OracleOrder::Second, delta, 1, cfg)?;
    let d = p.d;
    let mut value = linops::symmetrize(&h);
    if !cfg.noise.is_silent() {
        let sampler = Sampler::new(cfg.noise.family).expect("non-silent family");
        for j in 0..d {
            for i in 0..=j {
                let e = cfg.noise.sigma * sampler.mean(n, rng);
                value[(i, j)] += e;
                if i != j {
                    value[(j, i)] += e;
                }
            }
        }
    }
    let shift = irreducible(cfg, cfg.eps_h, rng);
    for i in 0..d {
        value[(i, i)] += shift;
    }
    let true_error = linops::spectral_norm(&(&value - &h));
    Ok(Estimate {
        value,
        n_samples: n,
        true_error,
    })
}

/// Oracle errors recorded during one iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleTrace {
    pub hessian_error: Option<f64>,
    pub gradient_error: Option<f64>,
    /// `e_k`, `e_{s_k}` and, after a correction step, the regenerated `e_{s_k}`.
    pub value_errors: Vec<f64>,
    pub hbar_norm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccuracyEvents {
    pub a: bool,
    pub b: bool,
    pub c: bool,
}

impl AccuracyEvents {
    pub fn all(&self) -> bool {
        self.a && self.b && self.c
    }
}

/// Evaluates the accuracy events of one iteration from its recorded errors.
///
/// With `alpha = 0`, or when no Hessian estimate was drawn, event A is the
/// bound `|H_bar| <= kappa_b`.
pub fn accuracy_events(
    trace: &OracleTrace,
    delta: f64,
    alpha: u8,
    cfg: &OracleConfig,
    kappa_b: Option<f64>,
) -> Result<AccuracyEvents> {
    let a_pow = i32::from(alpha);
    let a = match (alpha, trace.hessian_error) {
        (1, Some(err)) => err <= cfg.eps_h + cfg.kappa_h * delta,
        _ => match (trace.hbar_norm, kappa_b) {
            (Some(norm), Some(kb)) => norm <= kb,
            _ => return Err(Error::DiagnosticsUnavailable),
        },
    };
    let b = trace
        .gradient_error
        .ok_or(Error::DiagnosticsUnavailable)?
        <= cfg.eps_g + cfg.kappa_g * delta.powi(a_pow + 1);
    if trace.value_errors.is_empty() {
        return Err(Error::DiagnosticsUnavailable);
    }
    let worst = trace.value_errors.iter().copied().fold(0.0, f64::max);
    let c = worst <= cfg.eps_f + cfg.kappa_f * delta.powi(a_pow + 2);
    Ok(AccuracyEvents { a, b, c })
}
