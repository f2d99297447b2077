//! Dense linear-algebra kernels shared by the step computation.
//!
//! Everything here works on small dense matrices (d up to a few hundred). The
//! constraint Jacobian `G` is `m x d` with `m <= d`; all routines that need
//! `(G G^T)^{-1}` go through a thin QR factorization of `G^T` instead of
//! forming the normal matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value threshold below which `G` is declared rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of `ker(G)`, stored column-wise in a `d x (d - m)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NullBasis {
    pub z: DMatrix<f64>,
    pub source_rank: usize,
}

impl NullBasis {
    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    /// `Z u`
    pub fn lift(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.z * u
    }

    /// `Z^T x`
    pub fn restrict(&self, x: &DVector<f64>) -> DVector<f64> {
        self.z.tr_mul(x)
    }

    /// `Z^T H Z`, symmetrized.
    pub fn reduce(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let b = self.z.tr_mul(&(h * &self.z));
        symmetrize(&b)
    }
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Fails with `RankDeficientJacobian` when `sigma_min(G) <= RANK_TOL * sigma_max(G)`.
pub fn check_full_row_rank(g: &DMatrix<f64>) -> Result<()> {
    let m = g.nrows();
    if m == 0 {
        return Ok(());
    }
    if m > g.ncols() {
        return Err(Error::Dimension(format!(
            "{} constraints exceed {} variables",
            m,
            g.ncols()
        )));
    }
    let sv = g.singular_values();
    let sigma_max = sv.max();
    let sigma_min = sv.min();
    if !(sigma_min > RANK_TOL * sigma_max) || sigma_max == 0.0 {
        return Err(Error::RankDeficientJacobian {
            sigma_min,
            sigma_max,
        });
    }
    Ok(())
}

/// Orthonormal basis of `ker(G)` from a Householder QR of `[G^T | I]`.
///
/// Appending the identity makes the factorization produce a full `d x d`
/// orthogonal factor; its trailing `d - m` columns are orthogonal to the
/// range of `G^T`. No pivoting is used, so the basis is a deterministic
/// function of `G`.
pub fn nullspace_basis(g: &DMatrix<f64>) -> Result<NullBasis> {
    let (m, d) = g.shape();
    check_full_row_rank(g)?;
    if m == 0 {
        return Ok(NullBasis {
            z: DMatrix::identity(d, d),
            source_rank: 0,
        });
    }
    let mut aug = DMatrix::zeros(d, m + d);
    aug.view_mut((0, 0), (d, m)).copy_from(&g.transpose());
    aug.view_mut((0, m), (d, d)).fill_with_identity();
    let q = aug.qr().q();
    let z = q.columns(m, d - m).into_owned();
    Ok(NullBasis { z, source_rank: m })
}

/// Thin QR factors of `G^T`: `G^T = Q R` with `Q` `d x m`, `R` `m x m` upper triangular.
fn thin_qr_of_transpose(g: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_full_row_rank(g)?;
    let qr = g.transpose().qr();
    Ok((qr.q(), qr.r()))
}

/// `lambda = -(G G^T)^{-1} G g`, the least-squares multiplier.
pub fn least_squares_multiplier(g_mat: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    if g_mat.ncols() != grad.len() {
        return Err(Error::Dimension("gradient length differs from Jacobian width".into()));
    }
    if g_mat.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let (q, r) = thin_qr_of_transpose(g_mat)?;
    let rhs = -q.tr_mul(grad);
    r.solve_upper_triangular(&rhs)
        .ok_or(Error::RankDeficientJacobian {
            sigma_min: 0.0,
            sigma_max: 0.0,
        })
}

/// Minimum-norm solution of `c + G v = 0`, i.e. `v = -G^T (G G^T)^{-1} c`.
pub fn newton_normal_direction(g_mat: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
    if g_mat.nrows() != c.len() {
        return Err(Error::Dimension("constraint length differs from Jacobian height".into()));
    }
    if g_mat.nrows() == 0 {
        return Ok(DVector::zeros(g_mat.ncols()));
    }
    let (q, r) = thin_qr_of_transpose(g_mat)?;
    // G^T = Q R  =>  G G^T = R^T R  and  G^T (G G^T)^{-1} = Q R^{-T}
    let y = r
        .transpose()
        .solve_lower_triangular(c)
        .ok_or(Error::RankDeficientJacobian {
            sigma_min: 0.0,
            sigma_max: 0.0,
        })?;
    Ok(-(q * y))
}

/// Smallest eigenvalue of `Z^T H Z` and a unit eigenvector for it.
///
/// The eigenvector sign is normalized so that its largest-magnitude entry is
/// positive.
pub fn reduced_min_eigenpair(h: &DMatrix<f64>, basis: &NullBasis) -> Result<(f64, DVector<f64>)> {
    if basis.dim() == 0 {
        return Err(Error::EmptyNullSpace);
    }
    let reduced = basis.reduce(h);
    Ok(min_eigenpair(&reduced))
}

/// Minimum eigenpair of a symmetric matrix (non-empty).
pub fn min_eigenpair(sym: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(sym.clone());
    let (idx, tau) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty matrix");
    let mut zeta = eig.eigenvectors.column(idx).into_owned();
    normalize_sign(&mut zeta);
    (tau, zeta)
}

fn normalize_sign(v: &mut DVector<f64>) {
    let norm = v.norm();
    if norm > 0.0 {
        *v /= norm;
    }
    let pivot = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 {
        v.neg_mut();
    }
}

/// Operator 2-norm of a symmetric matrix: the largest eigenvalue magnitude.
pub fn spectral_norm(h: &DMatrix<f64>) -> f64 {
    if h.is_empty() {
        return 0.0;
    }
    let eig = SymmetricEigen::new(symmetrize(h));
    eig.eigenvalues.amax()
}

/// Operator 2-norm of a general matrix: the largest singular value.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Orthogonal projector onto `ker(G)`: `I - G^T (G G^T)^{-1} G`.
pub fn kernel_projector(g_mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = g_mat.ncols();
    if g_mat.nrows() == 0 {
        return Ok(DMatrix::identity(d, d));
    }
    let (q, _) = thin_qr_of_transpose(g_mat)?;
    Ok(DMatrix::identity(d, d) - &q * q.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        symmetrize(&random_matrix(rng, n, n))
    }

    fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        random_matrix(rng, n, n).qr().q()
    }

    #[test]
    fn axis_aligned_kernel() {
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let nb = nullspace_basis(&g).unwrap();
        assert_eq!(nb.z.shape(), (2, 1));
        assert!(nb.z[(0, 0)].abs() < 1e-15);
        assert_relative_eq!(nb.z[(1, 0)].abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn diagonal_kernel() {
        let s = 1.0 / 2f64.sqrt();
        let g = DMatrix::from_row_slice(1, 2, &[s, s]);
        let nb = nullspace_basis(&g).unwrap();
        let z0 = nb.z[(0, 0)];
        let z1 = nb.z[(1, 0)];
        assert_relative_eq!(z0.abs(), s, epsilon = 1e-14);
        assert_relative_eq!(z0, -z1, epsilon = 1e-14);
    }

    #[test]
    fn random_kernel_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let g = random_matrix(&mut rng, 2, 5);
            let nb = nullspace_basis(&g).unwrap();
            let ztz = nb.z.tr_mul(&nb.z) - DMatrix::identity(3, 3);
            assert!(ztz.amax() <= 1e-10);
            let gz = &g * &nb.z;
            assert!(gz.amax() <= 1e-10 * (1.0 + operator_norm(&g)));
        }
    }

    #[test]
    fn rank_deficient_rejected() {
        let g = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(nullspace_basis(&g), Err(Error::RankDeficientJacobian { .. })));
        assert!(matches!(
            least_squares_multiplier(&g, &DVector::zeros(3)),
            Err(Error::RankDeficientJacobian { .. })
        ));
        let zero = DMatrix::zeros(1, 2);
        assert!(matches!(check_full_row_rank(&zero), Err(Error::RankDeficientJacobian { .. })));
    }

    #[test]
    fn projector_matches_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let m = rng.random_range(1..4);
            let d = m + rng.random_range(1..5);
            let g = random_matrix(&mut rng, m, d);
            let nb = nullspace_basis(&g).unwrap();
            let p1 = &nb.z * nb.z.transpose();
            let p2 = kernel_projector(&g).unwrap();
            assert!((p1 - p2).amax() <= 1e-9);
        }
    }

    #[test]
    fn multiplier_examples() {
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let lam = least_squares_multiplier(&g, &DVector::from_vec(vec![2.0, 3.0])).unwrap();
        assert_relative_eq!(lam[0], -2.0, epsilon = 1e-14);
        let lam = least_squares_multiplier(&g, &DVector::from_vec(vec![0.0, 3.0])).unwrap();
        assert!(lam[0].abs() < 1e-15);
    }

    #[test]
    fn multiplier_is_least_squares_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_matrix(&mut rng, 2, 6);
        let grad = DVector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
        let lam = least_squares_multiplier(&g, &grad).unwrap();
        let best = (&grad + g.tr_mul(&lam)).norm();
        // stationarity of the least-squares problem
        let stat = &g * (&grad + g.tr_mul(&lam));
        assert!(stat.norm() <= 1e-10 * (1.0 + grad.norm()));
        for _ in 0..100 {
            let mu = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            assert!(best <= (&grad + g.tr_mul(&mu)).norm() + 1e-14);
        }
    }

    #[test]
    fn normal_direction_examples() {
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let v = newton_normal_direction(&g, &DVector::from_vec(vec![0.5])).unwrap();
        assert_relative_eq!(v[0], -0.5, epsilon = 1e-15);
        assert!(v[1].abs() < 1e-15);
        let v = newton_normal_direction(&g, &DVector::zeros(1)).unwrap();
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn normal_direction_is_minimum_norm_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let g = random_matrix(&mut rng, 2, 5);
            let c = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let v = newton_normal_direction(&g, &c).unwrap();
            assert!((&c + &g * &v).norm() <= 1e-10 * (1.0 + c.norm()));
            let nb = nullspace_basis(&g).unwrap();
            assert!(nb.restrict(&v).norm() <= 1e-10 * v.norm());
            // any other solution v + Z s is at least as long
            for _ in 0..20 {
                let s = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
                let other = &v + nb.lift(&s);
                assert!((&c + &g * &other).norm() <= 1e-9);
                assert!(v.norm() <= other.norm() + 1e-14);
            }
        }
    }

    #[test]
    fn reduced_eigen_examples() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0]));
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let nb = nullspace_basis(&g).unwrap();
        let (tau, zeta) = reduced_min_eigenpair(&h, &nb).unwrap();
        assert_relative_eq!(tau, -2.0, epsilon = 1e-14);
        assert_relative_eq!(zeta[0].abs(), 1.0, epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_matrix(&mut rng, 2, 5);
        let nb = nullspace_basis(&g).unwrap();
        let (tau, _) = reduced_min_eigenpair(&DMatrix::identity(5, 5), &nb).unwrap();
        assert_relative_eq!(tau, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reduced_eigen_residual_and_basis_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let h = random_symmetric(&mut rng, 6);
            let g = random_matrix(&mut rng, 2, 6);
            let nb = nullspace_basis(&g).unwrap();
            let (tau, zeta) = reduced_min_eigenpair(&h, &nb).unwrap();
            let b = nb.reduce(&h);
            assert!((&b * &zeta - &zeta * tau).norm() <= 1e-9 * (1.0 + spectral_norm(&h)));
            let q = random_orthogonal(&mut rng, 4);
            let rotated = NullBasis {
                z: &nb.z * q,
                source_rank: 2,
            };
            let (tau2, _) = reduced_min_eigenpair(&h, &rotated).unwrap();
            assert!((tau - tau2).abs() <= 1e-10);
        }
    }

    #[test]
    fn empty_null_space() {
        let g = DMatrix::<f64>::identity(2, 2);
        let nb = nullspace_basis(&g).unwrap();
        assert_eq!(nb.dim(), 0);
        assert_eq!(
            reduced_min_eigenpair(&DMatrix::identity(2, 2), &nb),
            Err(Error::EmptyNullSpace)
        );
    }

    #[test]
    fn spectral_norm_examples() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -5.0]));
        assert_relative_eq!(spectral_norm(&h), 5.0);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 3)), 0.0);
        assert_eq!(spectral_norm(&DMatrix::zeros(0, 0)), 0.0);
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let h = random_symmetric(&mut rng, 7);
            // power iteration on H^2 converges to the dominant |eigenvalue|^2
            let h2 = &h * &h;
            let mut x = DVector::from_element(7, 1.0);
            let mut est = 0.0;
            for _ in 0..5000 {
                let y = &h2 * &x;
                est = y.norm() / x.norm();
                x = y.normalize();
            }
            assert_relative_eq!(spectral_norm(&h), est.sqrt(), max_relative = 1e-8);
        }
    }
}
