//! Trial-step computation: radius split, normal step, tangential gradient and
//! eigen steps, and the second-order correction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{self, NullBasis};
use crate::problem::ProblemModel;

/// Floor applied to `|H_bar|` and `|G|` before they appear in a denominator.
pub const NORM_GUARD: f64 = 1e-12;

/// Reduced dimension above which the tangential subproblem switches to Steihaug-CG.
pub const EXACT_SOLVE_MAX_DIM: usize = 200;

const CERT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepKind {
    Gradient,
    Eigen,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Gradient => "gradient",
            StepKind::Eigen => "eigen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    GradientSplit,
    EigenSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusSplit {
    /// Normal budget.
    pub breve: f64,
    /// Tangential budget.
    pub tilde: f64,
    pub kind: SplitKind,
}

/// Which routine produced the tangential step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TangentialSolver {
    Exact,
    Steihaug,
    Cauchy,
    Eigen,
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepBundle {
    pub kind: StepKind,
    pub split: RadiusSplit,
    pub w: DVector<f64>,
    pub gamma_bar: f64,
    pub u: DVector<f64>,
    pub t: DVector<f64>,
    pub dx: DVector<f64>,
    pub soc: Option<DVector<f64>>,
    pub pred: Option<f64>,
    pub solver: TangentialSolver,
}

/// Splits `delta` into normal and tangential budgets from rescaled residuals.
///
/// `grad_l` is the estimated Lagrangian gradient in `x`. For the eigen split the
/// tangential residual is the scalar `tau_plus / |H|`.
pub fn split_radius(
    delta: f64,
    c: &DVector<f64>,
    g_norm: f64,
    grad_l: &DVector<f64>,
    h_norm: f64,
    tau_plus: f64,
    kind: SplitKind,
) -> RadiusSplit {
    let c_rs = c.norm() / g_norm.max(NORM_GUARD);
    let h = h_norm.max(NORM_GUARD);
    let l_rs = match kind {
        SplitKind::GradientSplit => grad_l.norm() / h,
        SplitKind::EigenSplit => tau_plus / h,
    };
    let joint = c_rs.hypot(l_rs);
    // Only an exactly zero (or non-finite) residual degenerates; any positive
    // cutoff here would break invariance under rescaling of the problem.
    if !(joint > 0.0 && joint.is_finite()) {
        return RadiusSplit {
            breve: 0.0,
            tilde: 0.0,
            kind,
        };
    }
    RadiusSplit {
        breve: delta * (c_rs / joint),
        tilde: delta * (l_rs / joint),
        kind,
    }
}

/// Shrinks the Newton normal direction `v` into the normal budget.
pub fn normal_step(v: &DVector<f64>, breve: f64) -> (DVector<f64>, f64) {
    let nv = v.norm();
    let gamma = if nv == 0.0 || nv <= breve { 1.0 } else { breve / nv };
    (v * gamma, gamma)
}

/// Gradient step if `|grad L| min{delta, |grad L|/|H|} >= tau_plus delta (delta + |c|)`.
pub fn choose_step_kind(
    grad_l_full_norm: f64,
    delta: f64,
    h_norm: f64,
    tau_plus: f64,
    c_norm: f64,
) -> StepKind {
    if tau_plus <= 0.0 {
        return StepKind::Gradient;
    }
    let lhs = grad_l_full_norm * curvature_limited(delta, grad_l_full_norm, h_norm);
    let rhs = tau_plus * delta * (delta + c_norm);
    if lhs >= rhs {
        StepKind::Gradient
    } else {
        StepKind::Eigen
    }
}

/// `min{delta, g / h}` with `g / 0 = inf`.
pub fn curvature_limited(delta: f64, g: f64, h: f64) -> f64 {
    if h > 0.0 {
        delta.min(g / h)
    } else {
        delta
    }
}

/// Reduced quadratic model `m(u) = 1/2 u'Bu + g'u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    pub b: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl ReducedModel {
    /// Builds `B = Z'HZ` and `g = Z'(gbar + Hw)`.
    pub fn new(basis: &NullBasis, h: &DMatrix<f64>, gbar: &DVector<f64>, w: &DVector<f64>) -> Self {
        let lin = gbar + h * w;
        Self {
            b: basis.reduce(h),
            g: basis.restrict(&lin),
        }
    }

    pub fn value(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.b * u)) + self.g.dot(u)
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// Right-hand side of the Cauchy decrease condition:
    /// `-(kappa/2) |g| min{radius, |g|/|B|}`.
    pub fn cauchy_bound(&self, radius: f64, kappa_fcd: f64) -> f64 {
        let gn = self.g.norm();
        -0.5 * kappa_fcd * gn * curvature_limited(radius, gn, linops::spectral_norm(&self.b))
    }
}

/// Minimizer of the model along `-g` inside the ball.
pub fn cauchy_point(model: &ReducedModel, radius: f64) -> DVector<f64> {
    let gn = model.g.norm();
    if gn == 0.0 || radius <= 0.0 {
        return DVector::zeros(model.dim());
    }
    let gbg = model.g.dot(&(&model.b * &model.g));
    let t_edge = radius / gn;
    let t = if gbg <= 0.0 { t_edge } else { (gn * gn / gbg).min(t_edge) };
    &model.g * (-t)
}

/// Global minimizer of the model on the ball via a full eigendecomposition,
/// including the hard case.
pub fn exact_trust_region(model: &ReducedModel, radius: f64) -> DVector<f64> {
    let n = model.dim();
    if n == 0 || radius <= 0.0 {
        return DVector::zeros(n);
    }
    let eig = SymmetricEigen::new(linops::symmetrize(&model.b));
    let lam = eig.eigenvalues;
    let q = eig.eigenvectors;
    let gh = q.transpose() * &model.g;
    let lam_min = lam.min();
    let scale = lam.amax().max(1.0);
    let step_norm = |sigma: f64| -> f64 {
        (0..n)
            .map(|i| {
                let den = lam[i] + sigma;
                if den == 0.0 {
                    if gh[i] == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (gh[i] / den).powi(2)
                }
            })
            .sum::<f64>()
            .sqrt()
    };
    let assemble = |sigma: f64| -> DVector<f64> {
        let mut coef = DVector::zeros(n);
        for i in 0..n {
            let den = lam[i] + sigma;
            if den != 0.0 {
                coef[i] = -gh[i] / den;
            }
        }
        &q * coef
    };

    if lam_min > 0.0 && step_norm(0.0) <= radius {
        return assemble(0.0);
    }

    let sigma_lo = (-lam_min).max(0.0);
    // Hard case: g has no component along the bottom eigenspace and the
    // shifted step stays inside the ball.
    let tol_eig = 1e-12 * scale;
    let bottom: Vec<usize> = (0..n).filter(|&i| lam[i] - lam_min <= tol_eig).collect();
    let g_bottom = bottom.iter().map(|&i| gh[i].powi(2)).sum::<f64>().sqrt();
    if lam_min <= 0.0 && g_bottom <= 1e-14 * model.g.norm().max(1e-300) {
        let mut coef = DVector::zeros(n);
        for i in 0..n {
            if !bottom.contains(&i) {
                coef[i] = -gh[i] / (lam[i] - lam_min);
            }
        }
        let pn = coef.norm();
        if pn <= radius {
            let extra = (radius * radius - pn * pn).max(0.0).sqrt();
            coef[bottom[0]] += extra;
            return &q * coef;
        }
    }

    // Secular equation 1/|p(sigma)| = 1/radius on (sigma_lo, sigma_hi].
    let gn = model.g.norm();
    let mut lo = sigma_lo;
    let mut hi = (gn / radius - lam_min).max(sigma_lo) + 1e-12 * scale;
    while step_norm(hi) > radius {
        hi = 2.0 * hi + 1.0;
    }
    let mut sigma = hi;
    for _ in 0..200 {
        let pn = step_norm(sigma);
        if (pn - radius).abs() <= 1e-13 * radius {
            break;
        }
        if pn > radius {
            lo = sigma;
        } else {
            hi = sigma;
        }
        // Newton on 1/|p| - 1/radius.
        let dphi: f64 = (0..n)
            .map(|i| gh[i].powi(2) / (lam[i] + sigma).powi(3))
            .sum::<f64>();
        let mut next = if pn.is_finite() && dphi > 0.0 {
            sigma + (pn / radius - 1.0) * pn * pn / dphi
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == sigma {
            break;
        }
        sigma = next;
    }
    let mut p = assemble(sigma);
    let pn = p.norm();
    if pn > radius {
        p *= radius / pn;
    }
    p
}

/// Steihaug truncated conjugate gradient on the ball.
pub fn steihaug_cg(model: &ReducedModel, radius: f64) -> DVector<f64> {
    let n = model.dim();
    let mut z = DVector::zeros(n);
    if n == 0 || radius <= 0.0 {
        return z;
    }
    let mut r = model.g.clone();
    let tol = 1e-10 * r.norm();
    if r.norm() <= tol || r.norm() == 0.0 {
        return z;
    }
    let mut d = -&r;
    for _ in 0..(2 * n + 10) {
        let bd = &model.b * &d;
        let dbd = d.dot(&bd);
        if dbd <= 0.0 {
            return &z + &d * boundary_root(&z, &d, radius);
        }
        let rr = r.dot(&r);
        let a = rr / dbd;
        let z_next = &z + &d * a;
        if z_next.norm() >= radius {
            return &z + &d * boundary_root(&z, &d, radius);
        }
        let r_next = &r + bd * a;
        if r_next.norm() <= tol {
            return z_next;
        }
        let beta = r_next.dot(&r_next) / rr;
        d = -&r_next + d * beta;
        z = z_next;
        r = r_next;
    }
    z
}

/// Positive `t` with `|z + t d| = radius`, assuming `|z| <= radius`.
fn boundary_root(z: &DVector<f64>, d: &DVector<f64>, radius: f64) -> f64 {
    let a = d.dot(d);
    let b = 2.0 * z.dot(d);
    let c = z.dot(z) - radius * radius;
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    // Numerically stable positive root.
    if b >= 0.0 {
        (-2.0 * c) / (b + disc)
    } else {
        (-b + disc) / (2.0 * a)
    }
}

fn clip_to_ball(mut u: DVector<f64>, radius: f64) -> DVector<f64> {
    let n = u.norm();
    if n > radius {
        u *= radius / n;
    }
    u
}

/// Tangential gradient step satisfying the Cauchy decrease condition.
///
/// The candidate from the exact or Steihaug solver is kept only if it is
/// within the ball, meets the Cauchy bound, and does no worse than the Cauchy
/// point; otherwise the Cauchy point itself is returned.
pub fn tangential_gradient_step(
    model: &ReducedModel,
    tilde: f64,
    kappa_fcd: f64,
) -> Result<(DVector<f64>, TangentialSolver)> {
    let n = model.dim();
    if n == 0 {
        return Ok((DVector::zeros(0), TangentialSolver::Empty));
    }
    let bound = model.cauchy_bound(tilde, kappa_fcd);
    let uc = cauchy_point(model, tilde);
    let mc = model.value(&uc);
    let slack = CERT_TOL * (1.0 + mc.abs());
    let (cand, solver) = if n <= EXACT_SOLVE_MAX_DIM {
        (exact_trust_region(model, tilde), TangentialSolver::Exact)
    } else {
        (steihaug_cg(model, tilde), TangentialSolver::Steihaug)
    };
    let cand = clip_to_ball(cand, tilde);
    let mv = model.value(&cand);
    if mv.is_finite() && mv <= bound + slack && mv <= mc + slack {
        return Ok((cand, solver));
    }
    log::debug!("tangential solver output failed certification; using Cauchy point");
    if !(mc <= bound + slack) {
        return Err(Error::CauchyCertificationFailure { excess: mc - bound });
    }
    Ok((uc, TangentialSolver::Cauchy))
}

/// Eigen step `u = +/- zeta * tilde` along the unit minimum eigenvector of the
/// reduced Hessian, signed so that `g'u <= 0` (ties take `+`).
pub fn tangential_eigen_step(model: &ReducedModel, tilde: f64) -> Result<DVector<f64>> {
    if model.dim() == 0 {
        return Err(Error::EmptyNullSpace);
    }
    let (_, zeta) = linops::min_eigenpair(&model.b);
    let sign = if model.g.dot(&zeta) > 0.0 { -1.0 } else { 1.0 };
    Ok(zeta * (sign * tilde))
}

/// Second-order correction `-G'(GG')^{-1}(c(x + dx) - c - G dx)`.
pub fn soc_step(
    p: &ProblemModel,
    x: &DVector<f64>,
    dx: &DVector<f64>,
    g_mat: &DMatrix<f64>,
    c: &DVector<f64>,
) -> Result<DVector<f64>> {
    let c_trial = p.constraints(&(x + dx))?;
    let resid = c_trial - c - g_mat * dx;
    linops::newton_normal_direction(g_mat, &resid)
}

/// Quantities needed to assemble one trial step.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs<'a> {
    pub basis: &'a NullBasis,
    pub h: &'a DMatrix<f64>,
    pub gbar: &'a DVector<f64>,
    pub grad_l: &'a DVector<f64>,
    pub c: &'a DVector<f64>,
    /// Newton normal direction `-G'(GG')^{-1} c`.
    pub v: &'a DVector<f64>,
    pub delta: f64,
    pub g_norm: f64,
    pub h_norm: f64,
    pub tau_plus: f64,
    pub kappa_fcd: f64,
}

/// Radius split, normal step and tangential step for the given kind.
pub fn build_step(kind: StepKind, inp: &StepInputs<'_>) -> Result<StepBundle> {
    let split_kind = match kind {
        StepKind::Gradient => SplitKind::GradientSplit,
        StepKind::Eigen => SplitKind::EigenSplit,
    };
    let split = split_radius(
        inp.delta,
        inp.c,
        inp.g_norm,
        inp.grad_l,
        inp.h_norm,
        inp.tau_plus,
        split_kind,
    );
    let (w, gamma_bar) = normal_step(inp.v, split.breve);
    let model = ReducedModel::new(inp.basis, inp.h, inp.gbar, &w);
    let (u, solver) = match kind {
        StepKind::Gradient => tangential_gradient_step(&model, split.tilde, inp.kappa_fcd)?,
        StepKind::Eigen => (tangential_eigen_step(&model, split.tilde)?, TangentialSolver::Eigen),
    };
    let t = inp.basis.lift(&u);
    let dx = &w + &t;
    Ok(StepBundle {
        kind,
        split,
        w,
        gamma_bar,
        u,
        t,
        dx,
        soc: None,
        pred: None,
        solver,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::make_problem;
    use approx::assert_relative_eq;

    fn model(b: &[f64], g: &[f64]) -> ReducedModel {
        let n = g.len();
        ReducedModel {
            b: DMatrix::from_row_slice(n, n, b),
            g: DVector::from_row_slice(g),
        }
    }

    #[test]
    fn split_examples() {
        let c = DVector::from_vec(vec![1.0]);
        let gl = DVector::from_vec(vec![1.0, 0.0]);
        let s = split_radius(1.0, &c, 1.0, &gl, 1.0, 0.0, SplitKind::GradientSplit);
        assert_relative_eq!(s.breve, 0.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(s.tilde, 0.5f64.sqrt(), epsilon = 1e-15);

        let c0 = DVector::zeros(1);
        let s = split_radius(2.5, &c0, 3.0, &gl, 7.0, 0.0, SplitKind::GradientSplit);
        assert_eq!((s.breve, s.tilde), (0.0, 2.5));

        let z = DVector::zeros(2);
        let s = split_radius(1.0, &c0, 1.0, &z, 1.0, 0.0, SplitKind::GradientSplit);
        assert_eq!((s.breve, s.tilde), (0.0, 0.0));

        let s = split_radius(1.0, &c, 2.0, &z, 4.0, 2.0, SplitKind::EigenSplit);
        assert_relative_eq!(s.breve, s.tilde, epsilon = 1e-15);
    }

    #[test]
    fn normal_step_examples() {
        let v = DVector::from_vec(vec![-0.5, 0.0]);
        let (w, g) = normal_step(&v, 1.0);
        assert_eq!((w.clone(), g), (v.clone(), 1.0));
        let (w, g) = normal_step(&v, 0.25);
        assert_eq!(g, 0.5);
        assert_eq!(w, DVector::from_vec(vec![-0.25, 0.0]));
        let (w, g) = normal_step(&DVector::zeros(2), 0.0);
        assert_eq!((w, g), (DVector::zeros(2), 1.0));
    }

    #[test]
    fn step_kind_examples() {
        assert_eq!(choose_step_kind(0.0, 1.0, 1.0, 0.0, 0.0), StepKind::Gradient);
        assert_eq!(choose_step_kind(0.0, 1.0, 1.0, 1.0, 0.0), StepKind::Eigen);
        assert_eq!(choose_step_kind(1.0, 1.0, 1.0, 0.1, 1.0), StepKind::Gradient);
        // Exact tie goes to Gradient: lhs = 1 * min(1, 1) = 1, rhs = 0.5 * 1 * 2 = 1.
        assert_eq!(choose_step_kind(1.0, 1.0, 1.0, 0.5, 1.0), StepKind::Gradient);
    }

    #[test]
    fn one_dimensional_tangential_step() {
        let m = model(&[1.0], &[-1.0]);
        let (u, _) = tangential_gradient_step(&m, 2.0, 1.0).unwrap();
        assert_relative_eq!(u[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.value(&u), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_gradient_tangential_step() {
        let m = model(&[2.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
        let (u, _) = tangential_gradient_step(&m, 1.0, 0.5).unwrap();
        assert_eq!(u.norm(), 0.0);
    }

    #[test]
    fn indefinite_instance_against_grid() {
        let m = model(&[-1.0, 0.0, 0.0, 1.0], &[0.0, -1.0]);
        let (u, _) = tangential_gradient_step(&m, 1.0, 1.0).unwrap();
        assert!(u.norm() <= 1.0 + 1e-10);
        assert!(m.value(&u) <= m.cauchy_bound(1.0, 1.0) + 1e-10);
        // The exact solver should match the best point on a polar grid.
        let mut best = f64::INFINITY;
        for i in 0..=100 {
            let r = i as f64 / 100.0;
            for j in 0..100 {
                let th = 2.0 * std::f64::consts::PI * j as f64 / 100.0;
                let p = DVector::from_vec(vec![r * th.cos(), r * th.sin()]);
                best = best.min(m.value(&p));
            }
        }
        assert!(m.value(&u) <= best + 1e-9, "{} vs grid {}", m.value(&u), best);
    }

    #[test]
    fn hard_case_reaches_boundary() {
        let m = model(&[-2.0, 0.0, 0.0, 1.0], &[0.0, 0.5]);
        let u = exact_trust_region(&m, 1.0);
        assert_relative_eq!(u.norm(), 1.0, epsilon = 1e-12);
        // Optimal: second component -0.5/(1+2), first fills the ball.
        assert_relative_eq!(u[1], -0.5 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(m.value(&u), 0.5 * (-2.0 * u[0] * u[0] + u[1] * u[1]) + 0.5 * u[1], epsilon = 1e-14);
    }

    #[test]
    fn steihaug_beats_cauchy() {
        let m = model(&[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, -1.0], &[1.0, -2.0, 0.5]);
        for radius in [0.1, 1.0, 10.0] {
            let u = steihaug_cg(&m, radius);
            assert!(u.norm() <= radius * (1.0 + 1e-12));
            assert!(m.value(&u) <= m.value(&cauchy_point(&m, radius)) + 1e-12);
        }
    }

    #[test]
    fn eigen_step_examples() {
        let m = model(&[-1.0, 0.0, 0.0, 2.0], &[0.0, 0.0]);
        let u = tangential_eigen_step(&m, 1.0).unwrap();
        assert_relative_eq!(u[0].abs(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(u.dot(&(&m.b * &u)), -1.0, epsilon = 1e-14);
        assert!(u[0] > 0.0, "tie goes to + sign");

        let m = model(&[-1.0, 0.0, 0.0, 2.0], &[0.3, 0.0]);
        let u = tangential_eigen_step(&m, 0.5).unwrap();
        assert!(m.g.dot(&u) <= 0.0);
        assert_eq!(tangential_eigen_step(&model(&[], &[]), 1.0), Err(Error::EmptyNullSpace));
    }

    #[test]
    fn soc_examples() {
        let p = make_problem("maratos").unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let t = 0.3;
        let dx = DVector::from_vec(vec![0.0, t]);
        let g = p.jacobian(&x).unwrap();
        let c = p.constraints(&x).unwrap();
        let d = soc_step(&p, &x, &dx, &g, &c).unwrap();
        assert_relative_eq!(d[0], -t * t / 2.0, epsilon = 1e-15);
        assert_eq!(d[1], 0.0);

        let q = make_problem("quad-linear").unwrap();
        let x = DVector::from_vec(vec![0.2, 0.1]);
        let dx = DVector::from_vec(vec![0.7, -0.4]);
        let d = soc_step(&q, &x, &dx, &q.jacobian(&x).unwrap(), &q.constraints(&x).unwrap()).unwrap();
        assert!(d.norm() <= 1e-15);
    }

    #[test]
    fn build_step_invariants() {
        let p = make_problem("sphere-plane").unwrap();
        let x = p.x0.clone();
        let g_mat = p.jacobian(&x).unwrap();
        let c = p.constraints(&x).unwrap();
        let gbar = p.gradient(&x).unwrap();
        let lam = linops::least_squares_multiplier(&g_mat, &gbar).unwrap();
        let grad_l = &gbar + g_mat.transpose() * &lam;
        let h = p.hessian(&x).unwrap() + p.weighted_constraint_hessian(&x, &lam).unwrap();
        let basis = linops::nullspace_basis(&g_mat).unwrap();
        let v = linops::newton_normal_direction(&g_mat, &c).unwrap();
        for delta in [0.01, 0.5, 5.0] {
            let inp = StepInputs {
                basis: &basis,
                h: &h,
                gbar: &gbar,
                grad_l: &grad_l,
                c: &c,
                v: &v,
                delta,
                g_norm: linops::operator_norm(&g_mat),
                h_norm: linops::spectral_norm(&h),
                tau_plus: 0.0,
                kappa_fcd: 0.5,
            };
            let s = build_step(StepKind::Gradient, &inp).unwrap();
            assert!(s.dx.norm() <= delta * (1.0 + 1e-9));
            assert!(s.w.norm() <= s.split.breve * (1.0 + 1e-10));
            assert!(s.u.norm() <= s.split.tilde * (1.0 + 1e-10));
            assert!(s.w.dot(&s.t).abs() <= 1e-10 * (s.w.norm() * s.t.norm()).max(1e-300));
            assert!((&g_mat * &s.t).amax() <= 1e-10 * (1.0 + s.t.norm()));
        }
    }
}
