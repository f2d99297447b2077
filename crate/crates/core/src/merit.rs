//! The l2 merit function `f + mu |c|`: predicted and actual reductions,
//! merit-parameter escalation and the acceptance tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::steps::curvature_limited;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeritConfig {
    pub mu0: f64,
    pub rho: f64,
    pub eta: f64,
    pub kappa_fcd: f64,
    pub mu_max: f64,
}

impl Default for MeritConfig {
    fn default() -> Self {
        Self {
            mu0: 1.0,
            rho: 1.2,
            eta: 0.4,
            kappa_fcd: 0.5,
            mu_max: 1e10,
        }
    }
}

impl MeritConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0) {
            return Err(Error::Config(format!("mu0 must be > 0, got {}", self.mu0)));
        }
        if !(self.rho > 1.0) {
            return Err(Error::Config(format!("rho must be > 1, got {}", self.rho)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.kappa_fcd > 0.0 && self.kappa_fcd <= 1.0) {
            return Err(Error::Config(format!(
                "kappa_fcd must lie in (0, 1], got {}",
                self.kappa_fcd
            )));
        }
        if !(self.mu_max >= self.mu0) {
            return Err(Error::Config("mu_max must be >= mu0".into()));
        }
        Ok(())
    }
}

/// Splits Pred into its merit-independent part and the coefficient of `mu`.
fn pred_parts(
    gbar: &DVector<f64>,
    h: &DMatrix<f64>,
    dx: &DVector<f64>,
    c: &DVector<f64>,
    g_mat: &DMatrix<f64>,
) -> (f64, f64) {
    let quad = gbar.dot(dx) + 0.5 * dx.dot(&(h * dx));
    let lin = (c + g_mat * dx).norm() - c.norm();
    (quad, lin)
}

/// `gbar'dx + 1/2 dx'H dx + mu (|c + G dx| - |c|)`.
pub fn pred(
    gbar: &DVector<f64>,
    h: &DMatrix<f64>,
    dx: &DVector<f64>,
    c: &DVector<f64>,
    g_mat: &DMatrix<f64>,
    mu: f64,
) -> f64 {
    let (quad, lin) = pred_parts(gbar, h, dx, c, g_mat);
    quad + mu * lin
}

/// Right-hand side the escalated Pred must not exceed:
/// `-(kappa/2) max{|grad L| min{delta, |grad L|/|H|}, tau_plus delta (delta + |c|)}`.
pub fn pred_threshold(
    grad_l_full_norm: f64,
    h_norm: f64,
    tau_plus: f64,
    delta: f64,
    c_norm: f64,
    kappa_fcd: f64,
) -> f64 {
    let grad_arm = grad_l_full_norm * curvature_limited(delta, grad_l_full_norm, h_norm);
    let eig_arm = tau_plus * delta * (delta + c_norm);
    -0.5 * kappa_fcd * grad_arm.max(eig_arm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritUpdate {
    pub mu: f64,
    pub pred: f64,
    pub threshold: f64,
    /// Number of `mu <- rho mu` multiplications performed.
    pub escalations: u32,
    /// False when the threshold could not be met because Pred does not
    /// decrease in `mu` (the step does not reduce linearized infeasibility).
    pub threshold_met: bool,
}

/// Smallest `mu_in * rho^j` whose Pred meets the threshold.
///
/// Escalation only runs while the coefficient of `mu` in Pred is negative;
/// otherwise raising `mu` cannot help, `mu_in` is kept and the miss is flagged.
#[allow(clippy::too_many_arguments)]
pub fn update_merit_param(
    gbar: &DVector<f64>,
    h: &DMatrix<f64>,
    dx: &DVector<f64>,
    c: &DVector<f64>,
    g_mat: &DMatrix<f64>,
    grad_l_full_norm: f64,
    h_norm: f64,
    tau_plus: f64,
    delta: f64,
    mu_in: f64,
    cfg: &MeritConfig,
) -> Result<MeritUpdate> {
    let threshold = pred_threshold(
        grad_l_full_norm,
        h_norm,
        tau_plus,
        delta,
        c.norm(),
        cfg.kappa_fcd,
    );
    let (quad, lin) = pred_parts(gbar, h, dx, c, g_mat);
    let mut mu = mu_in;
    let mut escalations = 0;
    let mut value = quad + mu * lin;
    if !(value <= threshold) && !(lin < 0.0) {
        log::debug!("Pred {value:e} misses threshold {threshold:e} and does not decrease in mu");
        return Ok(MeritUpdate {
            mu,
            pred: value,
            threshold,
            escalations: 0,
            threshold_met: false,
        });
    }
    while !(value <= threshold) {
        mu *= cfg.rho;
        escalations += 1;
        if mu > cfg.mu_max || !value.is_finite() {
            return Err(Error::MeritEscalationFailure { mu_max: cfg.mu_max });
        }
        value = quad + mu * lin;
    }
    Ok(MeritUpdate {
        mu,
        pred: value,
        threshold,
        escalations,
        threshold_met: true,
    })
}

/// `f_s - f_k + mu (|c_s| - |c_k|)`.
pub fn ared(f_s: f64, f_k: f64, c_s: &DVector<f64>, c_k: &DVector<f64>, mu: f64) -> f64 {
    f_s - f_k + mu * (c_s.norm() - c_k.norm())
}

/// Noise allowance in the acceptance ratio: `2 eps_f`, plus `eps_g^{3/2}` when `alpha = 1`.
pub fn theta(alpha: u8, eps_f: f64, eps_g: f64) -> f64 {
    if alpha == 0 {
        2.0 * eps_f
    } else {
        2.0 * eps_f + eps_g.powf(1.5)
    }
}

/// `(ared - theta) / pred >= eta`. A nonnegative Pred is rejected and logged.
pub fn accept_step(ared: f64, pred: f64, alpha: u8, eps_f: f64, eps_g: f64, eta: f64) -> bool {
    if !(pred < 0.0) {
        log::warn!("nonnegative predicted reduction {pred:e}; rejecting step");
        return false;
    }
    (ared - theta(alpha, eps_f, eps_g)) / pred >= eta
}

/// `max{|grad L| / max{1, |H|}, tau_plus} >= eta delta`.
pub fn radius_growth_test(grad_l_full_norm: f64, h_norm: f64, tau_plus: f64, eta: f64, delta: f64) -> bool {
    (grad_l_full_norm / h_norm.max(1.0)).max(tau_plus) >= eta * delta
}
