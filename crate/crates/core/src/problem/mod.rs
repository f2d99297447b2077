//! Equality-constrained problems `min f(x) s.t. c(x) = 0` with exact derivatives.
//!
//! The solver only ever sees noisy estimates of `f` and its derivatives; the
//! noiseless evaluations here are used by the oracles to build those
//! estimates and by the harness to measure true progress.

mod catalog;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linops;

pub use catalog::{benchmark_keys, catalog_keys, make_problem, manifest, ProblemManifestEntry};

/// Exact evaluators of an equality-constrained problem.
///
/// Implementations must be pure functions of `x`.
pub trait Functions: Send + Sync {
    fn objective(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn constraints(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn constraint_hessians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PointKind {
    Minimizer,
    Saddle,
}

/// A stationary point known in closed form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnownPoint {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub kind: PointKind,
}

/// A problem instance: metadata plus shared, immutable evaluators.
#[derive(Clone)]
pub struct ProblemModel {
    pub name: String,
    pub d: usize,
    pub m: usize,
    pub x0: DVector<f64>,
    pub f_inf_hint: Option<f64>,
    pub known_points: Vec<KnownPoint>,
    funcs: Arc<dyn Functions>,
}

impl fmt::Debug for ProblemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemModel")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("m", &self.m)
            .field("x0", &self.x0.as_slice())
            .finish_non_exhaustive()
    }
}

/// One noiseless evaluation of every problem quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueEval {
    pub f: f64,
    pub g: DVector<f64>,
    pub hess_f: DMatrix<f64>,
    pub c: DVector<f64>,
    pub jac: DMatrix<f64>,
    pub hess_c: Vec<DMatrix<f64>>,
}

fn finite_vec(v: DVector<f64>, component: &'static str) -> Result<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::EvaluationFailure { component })
    }
}

fn finite_mat(a: DMatrix<f64>, component: &'static str) -> Result<DMatrix<f64>> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(a)
    } else {
        Err(Error::EvaluationFailure { component })
    }
}

impl ProblemModel {
    pub fn new(
        name: impl Into<String>,
        m: usize,
        x0: DVector<f64>,
        funcs: Arc<dyn Functions>,
    ) -> Self {
        Self {
            name: name.into(),
            d: x0.len(),
            m,
            x0,
            f_inf_hint: None,
            known_points: Vec::new(),
            funcs,
        }
    }

    pub fn with_known_point(mut self, x: &[f64], lambda: &[f64], kind: PointKind) -> Self {
        self.known_points.push(KnownPoint {
            x: x.to_vec(),
            lambda: lambda.to_vec(),
            kind,
        });
        self
    }

    pub fn with_f_inf_hint(mut self, f_inf: f64) -> Self {
        self.f_inf_hint = Some(f_inf);
        self
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Dimension(format!(
                "point has length {}, problem `{}` has d = {}",
                x.len(),
                self.name,
                self.d
            )));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_len(x)?;
        let f = self.funcs.objective(x);
        if f.is_finite() {
            Ok(f)
        } else {
            Err(Error::EvaluationFailure { component: "f" })
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        finite_vec(self.funcs.gradient(x), "grad_f")
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_len(x)?;
        finite_mat(self.funcs.hessian(x), "hess_f")
    }

    pub fn constraints(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        finite_vec(self.funcs.constraints(x), "c")
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_len(x)?;
        finite_mat(self.funcs.jacobian(x), "jacobian")
    }

    pub fn constraint_hessians(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_len(x)?;
        self.funcs
            .constraint_hessians(x)
            .into_iter()
            .map(|h| finite_mat(h, "hess_c"))
            .collect()
    }

    pub fn eval_true(&self, x: &DVector<f64>) -> Result<TrueEval> {
        Ok(TrueEval {
            f: self.objective(x)?,
            g: self.gradient(x)?,
            hess_f: self.hessian(x)?,
            c: self.constraints(x)?,
            jac: self.jacobian(x)?,
            hess_c: self.constraint_hessians(x)?,
        })
    }

    /// `sum_i lambda_i * hess c_i(x)`
    pub fn weighted_constraint_hessian(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut acc = DMatrix::zeros(self.d, self.d);
        for (li, hi) in lambda.iter().zip(self.constraint_hessians(x)?) {
            acc += hi * *li;
        }
        Ok(acc)
    }

    /// True KKT residual and negative-curvature magnitude at `x`.
    ///
    /// Uses the least-squares multiplier of the exact gradient. When the
    /// null space is empty `tau_plus` is zero.
    pub fn kkt_residual_true(&self, x: &DVector<f64>) -> Result<(f64, f64)> {
        let eval = self.eval_true(x)?;
        kkt_from_eval(&eval)
    }

    /// Finite-difference validation of the analytic derivatives at `x`.
    pub fn derivative_check(&self, x: &DVector<f64>) -> Result<DerivativeCheck> {
        let eval = self.eval_true(x)?;
        let d = self.d;
        let step = |i: usize| 1e-6 * x[i].abs().max(1.0);

        let mut fd_grad = DVector::zeros(d);
        let mut fd_jac = DMatrix::zeros(self.m, d);
        let mut fd_hess = DMatrix::zeros(d, d);
        let mut fd_hess_c = vec![DMatrix::zeros(d, d); self.m];
        for i in 0..d {
            let h = step(i);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let width = xp[i] - xm[i];
            fd_grad[i] = (self.objective(&xp)? - self.objective(&xm)?) / width;
            let dc = (self.constraints(&xp)? - self.constraints(&xm)?) / width;
            fd_jac.set_column(i, &dc);
            let dg = (self.gradient(&xp)? - self.gradient(&xm)?) / width;
            fd_hess.set_column(i, &dg);
            let dj = (self.jacobian(&xp)? - self.jacobian(&xm)?) / width;
            for (j, hc) in fd_hess_c.iter_mut().enumerate() {
                hc.set_column(i, &dj.row(j).transpose());
            }
        }

        let rel = |diff: f64, scale: f64| diff / scale.max(1.0);
        let hess_c_error = fd_hess_c
            .iter()
            .zip(&eval.hess_c)
            .map(|(fd, an)| rel((fd - an).norm(), an.norm()))
            .fold(0.0, f64::max);
        let asym = |a: &DMatrix<f64>| (a - a.transpose()).amax();
        Ok(DerivativeCheck {
            gradient_error: rel((&fd_grad - &eval.g).norm(), eval.g.norm()),
            jacobian_error: rel((&fd_jac - &eval.jac).norm(), eval.jac.norm()),
            hessian_error: rel((&fd_hess - &eval.hess_f).norm(), eval.hess_f.norm()),
            constraint_hessian_error: hess_c_error,
            max_asymmetry: eval.hess_c.iter().map(asym).fold(asym(&eval.hess_f), f64::max),
        })
    }
}

/// Relative errors of analytic derivatives against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck {
    pub gradient_error: f64,
    pub jacobian_error: f64,
    pub hessian_error: f64,
    pub constraint_hessian_error: f64,
    pub max_asymmetry: f64,
}

impl DerivativeCheck {
    pub fn passes(&self) -> bool {
        self.gradient_error <= 1e-5
            && self.jacobian_error <= 1e-5
            && self.hessian_error <= 1e-4
            && self.constraint_hessian_error <= 1e-4
            && self.max_asymmetry <= 1e-12
    }
}

pub(crate) fn kkt_from_eval(eval: &TrueEval) -> Result<(f64, f64)> {
    let lambda = linops::least_squares_multiplier(&eval.jac, &eval.g)?;
    let grad_l = &eval.g + eval.jac.tr_mul(&lambda);
    let kkt = (grad_l.norm_squared() + eval.c.norm_squared()).sqrt();
    let basis = linops::nullspace_basis(&eval.jac)?;
    if basis.dim() == 0 {
        return Ok((kkt, 0.0));
    }
    let mut hess_l = eval.hess_f.clone();
    for (li, hi) in lambda.iter().zip(&eval.hess_c) {
        hess_l += hi * *li;
    }
    let (tau, _) = linops::reduced_min_eigenpair(&hess_l, &basis)?;
    Ok((kkt, (-tau).max(0.0)))
}
