//! Built-in analytic test problems with closed-form derivatives.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{Functions, KnownPoint, PointKind, ProblemModel};
use crate::error::{Error, Result};

const KEYS: &[&str] = &[
    "quad-linear",
    "rosenbrock-sphere",
    "saddle",
    "maratos",
    "sphere-plane",
    "sphere-plane-10",
    "unconstrained-quad",
    "degenerate",
];

/// Catalog keys, in manifest order.
pub fn catalog_keys() -> &'static [&'static str] {
    KEYS
}

/// Keys of the problems that satisfy the full-row-rank assumption; `degenerate`
/// is kept out because it exists to exercise the error path.
pub fn benchmark_keys() -> Vec<&'static str> {
    KEYS.iter().copied().filter(|k| *k != "degenerate").collect()
}

pub fn make_problem(name: &str) -> Result<ProblemModel> {
    let p = match name {
        "quad-linear" => ProblemModel::new("quad-linear", 1, vec2(0.0, 0.0), Arc::new(QuadLinear))
            .with_known_point(&[0.5, 0.5], &[-0.5], PointKind::Minimizer)
            .with_f_inf_hint(0.0),
        "rosenbrock-sphere" => ProblemModel::new(
            "rosenbrock-sphere",
            1,
            DVector::from_vec(vec![-1.2, 1.0, 1.0]),
            Arc::new(RosenbrockSphere { a: ROSENBROCK_A }),
        )
        .with_known_point(&[1.0, 1.0, 1.0], &[0.0], PointKind::Minimizer)
        .with_f_inf_hint(0.0),
        "saddle" => ProblemModel::new(
            "saddle",
            1,
            DVector::from_vec(vec![0.8, 0.0, 0.32]),
            Arc::new(Saddle),
        )
        .with_known_point(&[0.0, 0.0, 0.0], &[0.0], PointKind::Saddle)
        .with_known_point(&[0.0, 1.0, 0.0], &[0.0], PointKind::Minimizer)
        .with_known_point(&[0.0, -1.0, 0.0], &[0.0], PointKind::Minimizer)
        .with_f_inf_hint(-0.25),
        "maratos" => ProblemModel::new("maratos", 1, vec2(-1.0, 0.0), Arc::new(Maratos))
            .with_known_point(&[1.0, 0.0], &[-1.5], PointKind::Minimizer)
            .with_known_point(&[-1.0, 0.0], &[-2.5], PointKind::Saddle)
            .with_f_inf_hint(-1.0),
        "sphere-plane" => ProblemModel::new(
            "sphere-plane",
            2,
            DVector::from_vec(vec![2.0, 0.0, 1.0, -0.5]),
            Arc::new(SpherePlane),
        )
        .with_known_point(&[1.0, 1.0, 1.0, 1.0], &[0.5, 0.25], PointKind::Minimizer),
        "sphere-plane-10" => {
            let x0 = DVector::from_fn(SP10_D, |i, _| 1.0 + 0.3 * sp10_sign(i));
            let target: Vec<f64> = (0..SP10_D).map(sp10_target).collect();
            ProblemModel::new("sphere-plane-10", 2, x0, Arc::new(SpherePlane10))
                .with_known_point(&target, &[0.5, 0.25], PointKind::Minimizer)
        }
        "unconstrained-quad" => ProblemModel::new(
            "unconstrained-quad",
            0,
            vec2(-2.0, 2.0),
            Arc::new(UnconstrainedQuad),
        )
        .with_known_point(&[1.0, 1.0 / 3.0], &[], PointKind::Minimizer),
        "degenerate" => ProblemModel::new("degenerate", 1, vec2(0.0, 1.0), Arc::new(Degenerate)),
        other => return Err(Error::UnknownProblem(other.to_string())),
    };
    Ok(p)
}

/// Manifest row describing one catalog problem.
#[derive(Debug, Clone, Serialize)]
pub struct ProblemManifestEntry {
    pub name: String,
    pub d: usize,
    pub m: usize,
    pub x0: Vec<f64>,
    pub known_points: Vec<KnownPoint>,
    pub description: &'static str,
}

pub fn manifest() -> Vec<ProblemManifestEntry> {
    KEYS.iter()
        .map(|k| {
            let p = make_problem(k).expect("catalog key");
            ProblemManifestEntry {
                name: p.name.clone(),
                d: p.d,
                m: p.m,
                x0: p.x0.as_slice().to_vec(),
                known_points: p.known_points.clone(),
                description: describe(k),
            }
        })
        .collect()
}

fn describe(key: &str) -> &'static str {
    match key {
        "quad-linear" => "min 1/2|x|^2 s.t. x1 + x2 = 1",
        "rosenbrock-sphere" => "chained Rosenbrock (a = 2) on the sphere |x|^2 = 3",
        "saddle" => "1/2 x1^2 + 1/4 x2^4 - 1/2 x2^2 + 1/2 x3^2 s.t. x3 = x1^2/2; saddle at 0",
        "maratos" => "2(x1^2 + x2^2 - 1) - x1 s.t. x1^2 + x2^2 = 1; starts at the saddle (-1, 0)",
        "sphere-plane" => "weighted quadratic with a sphere and a plane constraint (m = 2)",
        "sphere-plane-10" => "ten-dimensional weighted quadratic on a sphere and an alternating-sign plane (m = 2)",
        "unconstrained-quad" => "unconstrained convex quadratic (m = 0)",
        "degenerate" => "c = x1^2 with a vanishing Jacobian on the feasible set; error-path probe",
        _ => "",
    }
}

fn vec2(a: f64, b: f64) -> DVector<f64> {
    DVector::from_vec(vec![a, b])
}

fn row(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, values.len(), values)
}

struct QuadLinear;

impl Functions for QuadLinear {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.norm_squared()
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }
    fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0] + x[1] - 1.0)
    }
    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        row(&[1.0, 1.0])
    }
    fn constraint_hessians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::zeros(2, 2)]
    }
}

const ROSENBROCK_A: f64 = 2.0;

/// `sum_i a (x_{i+1} - x_i^2)^2 + (1 - x_i)^2` on `|x|^2 = n`; minimizer at the all-ones point.
struct RosenbrockSphere {
    a: f64,
}

impl Functions for RosenbrockSphere {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        (0..x.len() - 1)
            .map(|i| self.a * (x[i + 1] - x[i] * x[i]).powi(2) + (1.0 - x[i]).powi(2))
            .sum()
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        let mut g = DVector::zeros(n);
        for i in 0..n - 1 {
            let r = x[i + 1] - x[i] * x[i];
            g[i] += -4.0 * self.a * x[i] * r - 2.0 * (1.0 - x[i]);
            g[i + 1] += 2.0 * self.a * r;
        }
        g
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            h[(i, i)] += 12.0 * self.a * x[i] * x[i] - 4.0 * self.a * x[i + 1] + 2.0;
            h[(i + 1, i + 1)] += 2.0 * self.a;
            h[(i, i + 1)] -= 4.0 * self.a * x[i];
            h[(i + 1, i)] -= 4.0 * self.a * x[i];
        }
        h
    }
    fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x.norm_squared() - x.len() as f64)
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, x.len(), (x * 2.0).as_slice())
    }
    fn constraint_hessians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::identity(x.len(), x.len()) * 2.0]
    }
}

/// Saddle at the origin (reduced Hessian diag(1, -1)); minimizers at `(0, +-1, 0)`.
struct Saddle;

impl Functions for Saddle {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x[0] * x[0] + 0.25 * x[1].powi(4) - 0.5 * x[1] * x[1] + 0.5 * x[2] * x[2]
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[0], x[1].powi(3) - x[1], x[2]])
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0 * x[1] * x[1] - 1.0, 1.0]))
    }
    fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[2] - 0.5 * x[0] * x[0])
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        row(&[-x[0], 0.0, 1.0])
    }
    fn constraint_hessians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut h = DMatrix::zeros(3, 3);
        h[(0, 0)] = -1.0;
        vec![h]
    }
}

/// `2(x1^2 + x2^2 - 1) - x1` on the unit circle.
struct Maratos;

impl Functions for Maratos {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        2.0 * (x[0] * x[0] + x[1] * x[1] - 1.0) - x[0]
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        vec2(4.0 * x[0] - 1.0, 4.0 * x[1])
    }
    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * 4.0
    }
    fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0] * x[0] + x[1] * x[1] - 1.0)
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        row(&[2.0 * x[0], 2.0 * x[1]])
    }
    fn constraint_hessians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::identity(2, 2) * 2.0]
    }
}

/// Weighted quadratic whose KKT point is `(1, 1, 1, 1)` with `lambda = (1/2, 1/4)`
/// under `|x|^2 = 4` and `x1 - x2 + x3 - x4 = 0`.
struct SpherePlane;

const SP_WEIGHTS: [f64; 4] = [1.0, 2.0, 1.5, 1.0];
// -G(x*)^T lambda* for x* = 1, lambda* = (1/2, 1/4)
const SP_LINEAR: [f64; 4] = [1.25, 0.75, 1.25, 0.75];

impl Functions for SpherePlane {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        (0..4)
            .map(|i| 0.5 * SP_WEIGHTS[i] * (x[i] - 1.0).powi(2) - SP_LINEAR[i] * x[i])
            .sum()
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(4, |i, _| SP_WEIGHTS[i] * (x[i] - 1.0) - SP_LINEAR[i])
    }
    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&SP_WEIGHTS))
    }
    fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x.norm_squared() - 4.0, x[0] - x[1] + x[2] - x[3]])
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            4,
            &[2.0 * x[0], 2.0 * x[1], 2.0 * x[2], 2.0 * x[3], 1.0, -1.0, 1.0, -1.0],
        )
    }
    fn constraint_hessians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::identity(4, 4) * 2.0, DMatrix::zeros(4, 4)]
    }
}

const SP10_D: usize = 10;

fn sp10_target(i: usize) -> f64 {
    0.5 + i as f64 / (SP10_D - 1) as f64
}

fn sp10_weight(i: usize) -> f64 {
    1.0 + i as f64 / (SP10_D - 1) as f64
}

fn sp10_sign(i: usize) -> f64 {
    if i.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Weighted quadratic around `t` with linear tilt `l = t/2 + s/4`, so that `x* = t`
/// is a KKT point of `1/2(|x|^2 - |t|^2) = 0`, `s'(x - t) = 0` with `lambda = (1/2, 1/4)`.
struct SpherePlane10;

impl SpherePlane10 {
    fn tilt(i: usize) -> f64 {
        0.5 * sp10_target(i) + 0.25 * sp10_sign(i)
    }
}

impl Functions for SpherePlane10 {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        (0..SP10_D)
            .map(|i| 0.5 * sp10_weight(i) * (x[i] - sp10_target(i)).powi(2) - Self::tilt(i) * x[i])
            .sum()
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(SP10_D, |i, _| sp10_weight(i) * (x[i] - sp10_target(i)) - Self::tilt(i))
    }
    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_fn(SP10_D, |i, _| sp10_weight(i)))
    }
    fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        let tt: f64 = (0..SP10_D).map(|i| sp10_target(i).powi(2)).sum();
        let plane: f64 = (0..SP10_D).map(|i| sp10_sign(i) * (x[i] - sp10_target(i))).sum();
        DVector::from_vec(vec![0.5 * (x.norm_squared() - tt), plane])
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(2, SP10_D, |r, i| if r == 0 { x[i] } else { sp10_sign(i) })
    }
    fn constraint_hessians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        vec![DMatrix::identity(SP10_D, SP10_D), DMatrix::zeros(SP10_D, SP10_D)]
    }
}

struct UnconstrainedQuad;

impl Functions for UnconstrainedQuad {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x[0] * x[0] + 3.0 * x[1] * x[1]) - x[0] - x[1]
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        vec2(x[0] - 1.0, 3.0 * x[1] - 1.0)
    }
    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&vec2(1.0, 3.0))
    }
    fn constraints(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, 2)
    }
    fn constraint_hessians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        Vec::new()
    }
}

/// `c = x1^2`: the Jacobian vanishes on the whole feasible set.
struct Degenerate;

impl Functions for Degenerate {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x[0] * x[0] + x[1] * x[1])
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }
    fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0] * x[0])
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        row(&[2.0 * x[0], 0.0])
    }
    fn constraint_hessians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut h = DMatrix::zeros(2, 2);
        h[(0, 0)] = 2.0;
        vec![h]
    }
}
