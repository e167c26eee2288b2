//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`min_eigenvalue`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Maximum absolute asymmetry of `m`, i.e. `max |m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
}

/// Smallest eigenvalue of a symmetric matrix.
///
/// Errors if the input is asymmetric beyond `SYMMETRY_TOL` relative to its
/// max-norm.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    let scale = max_abs(m).max(1.0);
    if asymmetry(m) > SYMMETRY_TOL * scale {
        return Err(Error::Asymmetric);
    }
    let sym = 0.5 * (m + m.transpose());
    let eig = sym.clone().symmetric_eigenvalues();
    if eig.iter().all(|v| v.is_finite()) {
        return Ok(eig.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    // the QL iteration can emit inf/NaN on some sparse inputs; fall back to
    // bisection on the Cholesky PD test for lambda_min
    Ok(min_eigenvalue_bisect(&sym))
}

fn min_eigenvalue_bisect(sym: &DMatrix<f64>) -> f64 {
    let d = sym.nrows();
    // Gershgorin bounds
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..d {
        let r: f64 = (0..d).filter(|&j| j != i).map(|j| sym[(i, j)].abs()).sum();
        lo = lo.min(sym[(i, i)] - r);
        hi = hi.max(sym[(i, i)] + r);
    }
    let tol = 1e-12 * (hi.abs().max(lo.abs()).max(1.0));
    let eye = DMatrix::<f64>::identity(d, d);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if Cholesky::new(sym - &eye * mid).is_some() {
            lo = mid; // lambda_min > mid
        } else {
            hi = mid;
        }
    }
    lo
}

/// A factor `F` with `F F^T = cov`, used for multivariate normal sampling.
///
/// Cholesky first; if that fails (semidefinite input), an eigendecomposition
/// with negative eigenvalues clipped at zero.
pub struct CovFactor {
    factor: DMatrix<f64>,
}

impl CovFactor {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        if let Some(chol) = Cholesky::new(cov.clone()) {
            return Ok(Self { factor: chol.unpack() });
        }
        let sym = 0.5 * (cov + cov.transpose());
        let eig = nalgebra::linalg::SymmetricEigen::new(sym);
        let scale = max_abs(cov).max(1.0);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-10 * scale - 1e-10 {
            return Err(Error::Data(format!(
                "covariance is not positive semidefinite (min eigenvalue {min:.3e})"
            )));
        }
        let mut factor = eig.eigenvectors;
        for j in 0..d {
            let s = eig.eigenvalues[j].max(0.0).sqrt();
            factor.column_mut(j).scale_mut(s);
        }
        if factor.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(
                "eigendecomposition of the covariance did not converge".into(),
            ));
        }
        Ok(Self { factor })
    }

    /// Maps i.i.d. standard normals to a draw from `N(0, cov)`.
    pub fn apply(&self, std_normals: &DVector<f64>) -> DVector<f64> {
        &self.factor * std_normals
    }
}

/// Cholesky factorization wrapper for sampling from `N(0, theta^{-1})`
/// without forming the inverse.
pub struct PrecisionFactor {
    chol: Cholesky<f64, Dyn>,
}

impl PrecisionFactor {
    pub fn new(theta: &DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(theta.clone())
            .ok_or_else(|| Error::Data("precision matrix is not positive definite".into()))?;
        Ok(Self { chol })
    }

    /// Solves `L^T w = eps`; the result has covariance `theta^{-1}`.
    pub fn sample_from_inverse(&self, std_normals: &DVector<f64>) -> Result<DVector<f64>> {
        self.chol
            .l()
            .transpose()
            .solve_upper_triangular(std_normals)
            .ok_or_else(|| Error::Data("singular Cholesky factor".into()))
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn min_eigenvalue_identity() {
        let m = DMatrix::<f64>::identity(4, 4);
        assert_relative_eq!(min_eigenvalue(&m).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn min_eigenvalue_two_by_two() {
        // [[2,1],[1,2]] has eigenvalues {1, 3}.
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(min_eigenvalue(&m).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn min_eigenvalue_diagonal_negative() {
        let m = DMatrix::from_row_slice(2, 2, &[-0.5, 0.0, 0.0, 2.0]);
        assert_relative_eq!(min_eigenvalue(&m).unwrap(), -0.5, epsilon = 1e-10);
    }

    #[test]
    fn min_eigenvalue_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(min_eigenvalue(&m), Err(Error::Asymmetric)));
    }

    #[test]
    fn cov_factor_reproduces_covariance() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let f = CovFactor::new(&cov).unwrap();
        let prod = &f.factor * f.factor.transpose();
        assert!((prod - &cov).amax() < 1e-10);
    }

    #[test]
    fn cov_factor_handles_singular_psd() {
        // rank-1 PSD matrix
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let cov = &v * v.transpose();
        let f = CovFactor::new(&cov).unwrap();
        let prod = &f.factor * f.factor.transpose();
        assert!((prod - &cov).amax() < 1e-8);
    }

    #[test]
    fn precision_factor_sampling_has_inverse_covariance() {
        let theta = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let pf = PrecisionFactor::new(&theta).unwrap();
        // E[w w^T] = L^{-T} L^{-1} = theta^{-1}; check via the deterministic map.
        let lt = pf.chol.l().transpose();
        let inv = pf.inverse();
        let recon = lt.clone().try_inverse().unwrap() * lt.try_inverse().unwrap().transpose();
        assert!((recon - inv).amax() < 1e-10);
    }
}
