//! Per-column CLIME estimation, assembly of the precision estimate, and
//! cross-validated selection of the sparsity parameter.
//!
//! Each column solves
//! `min ||theta||_1  s.t.  ||sigma_hat theta - e_j||_inf <= lambda`
//! as a linear program in the split variables `(theta+, theta-)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, SmoothedCovariance};
use crate::data::PairedDataset;
use crate::seeding;
use crate::simplex::{self, LpError};

/// Output symmetrization rule for the assembled estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetrizeOutput {
    None,
    /// `theta_jk = theta_kj =` whichever of the two has smaller magnitude.
    MinMagnitude,
}

#[derive(Debug, Clone)]
pub struct ClimeConfig {
    pub lambda: f64,
    pub symmetrize_input: bool,
    pub symmetrize_output: SymmetrizeOutput,
    pub lp_tolerance: f64,
}

impl ClimeConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            symmetrize_input: true,
            symmetrize_output: SymmetrizeOutput::MinMagnitude,
            lp_tolerance: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 {
            return Err(Error::Data(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.lp_tolerance <= 0.0 || self.lp_tolerance > 1e-4 {
            return Err(Error::Data("lp_tolerance must lie in (0, 1e-4]".into()));
        }
        Ok(())
    }
}

/// Assembled estimate at one query time.
#[derive(Debug, Clone)]
pub struct PrecisionEstimate {
    pub z: f64,
    pub matrix: DMatrix<f64>,
    /// achieved `||sigma_hat theta_j - e_j||_inf` per column
    pub column_feasibility: DVector<f64>,
}

fn iteration_cap(d: usize) -> usize {
    50 * d * d
}

/// Solves one CLIME column.
pub fn clime_column(
    sigma_hat: &DMatrix<f64>,
    j: usize,
    lambda: f64,
    _tol: f64,
) -> Result<DVector<f64>> {
    let d = sigma_hat.nrows();
    assert!(j < d);
    if lambda < 0.0 {
        return Err(Error::Data("lambda must be nonnegative".into()));
    }

    // A = [S, -S; -S, S], b = [lambda 1 + e_j; lambda 1 - e_j]
    let mut a = DMatrix::<f64>::zeros(2 * d, 2 * d);
    for r in 0..d {
        for cidx in 0..d {
            let v = sigma_hat[(r, cidx)];
            a[(r, cidx)] = v;
            a[(r, d + cidx)] = -v;
            a[(d + r, cidx)] = -v;
            a[(d + r, d + cidx)] = v;
        }
    }
    let mut b = vec![lambda; 2 * d];
    b[j] += 1.0;
    b[d + j] -= 1.0;
    let c = vec![1.0; 2 * d];

    let sol = simplex::solve_lp(&c, &a, &b, iteration_cap(d)).map_err(|e| match e {
        LpError::Infeasible { .. } => Error::Infeasible { column: j, lambda },
        LpError::Unbounded => Error::Data("CLIME LP unbounded (bad input matrix)".into()),
        LpError::IterationLimit { iterations, residual } => {
            Error::SolverStall { iterations, residual }
        }
    })?;

    Ok(DVector::from_fn(d, |i, _| sol.x[i] - sol.x[d + i]))
}

fn feasibility_residual(sigma: &DMatrix<f64>, theta_j: &DVector<f64>, j: usize) -> f64 {
    let mut r = sigma * theta_j;
    r[j] -= 1.0;
    r.amax()
}

/// Solves all columns and assembles `theta_hat` per the configuration.
pub fn clime_full(
    sigma_hat: &DMatrix<f64>,
    z: f64,
    config: &ClimeConfig,
) -> Result<PrecisionEstimate> {
    let d = sigma_hat.nrows();
    if sigma_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite entry in smoothed covariance".into()));
    }
    let sigma = if config.symmetrize_input {
        0.5 * (sigma_hat + sigma_hat.transpose())
    } else {
        sigma_hat.clone()
    };

    let columns: Vec<DVector<f64>> = (0..d)
        .into_par_iter()
        .map(|j| clime_column(&sigma, j, config.lambda, config.lp_tolerance))
        .collect::<Result<Vec<_>>>()?;

    let mut matrix = DMatrix::<f64>::zeros(d, d);
    for (j, col) in columns.iter().enumerate() {
        matrix.set_column(j, col);
    }
    if config.symmetrize_output == SymmetrizeOutput::MinMagnitude {
        for j in 0..d {
            for k in (j + 1)..d {
                let v = if matrix[(j, k)].abs() <= matrix[(k, j)].abs() {
                    matrix[(j, k)]
                } else {
                    matrix[(k, j)]
                };
                matrix[(j, k)] = v;
                matrix[(k, j)] = v;
            }
        }
    }
    // Feasibility is reported for the columns as solved (pre output
    // symmetrization).
    let column_feasibility =
        DVector::from_fn(d, |j, _| feasibility_residual(&sigma, &columns[j], j));
    Ok(PrecisionEstimate { z, matrix, column_feasibility })
}

/// Convenience wrapper taking a smoothed covariance estimate.
pub fn clime_from_cov(cov: &SmoothedCovariance, config: &ClimeConfig) -> Result<PrecisionEstimate> {
    clime_full(&cov.matrix, cov.z, config)
}

#[derive(Debug, Clone)]
pub struct CvRow {
    pub lambda: f64,
    pub cv: f64,
    pub sd: f64,
}

#[derive(Debug, Clone)]
pub struct CvSelection {
    pub lambda_star: f64,
    pub table: Vec<CvRow>,
}

/// L-fold cross-validation for lambda.
///
/// Folds are a uniform random partition of the time points. For each held-out
/// point the precision matrix is estimated at its time from the retained
/// folds and scored against the held-out smoothed covariance via
/// `||sigma_test theta_train - I||_max`. Selection follows the
/// minimum-plus-two-standard-deviations rule, where the standard deviation is
/// taken across the L fold-level sums at the minimizing lambda.
pub fn cross_validate_lambda(
    ds: &PairedDataset,
    kernel: &KernelSpec,
    lambda_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvSelection> {
    if folds < 2 {
        return Err(Error::Data("need at least 2 folds".into()));
    }
    if lambda_grid.is_empty() {
        return Err(Error::Data("lambda grid is empty".into()));
    }
    let n = ds.n();
    let n_lambda = lambda_grid.len();

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeding::rng_for(seed, "cv-folds", 0);
    for i in 0..n {
        let pick = i + rng.random_range(0..n - i);
        order.swap(i, pick);
    }
    let fold_of: Vec<usize> = {
        let mut f = vec![0usize; n];
        for (pos, &i) in order.iter().enumerate() {
            f[i] = pos % folds;
        }
        f
    };

    // fold_sums[l][a] = sum over held-out i in fold l of the max-norm error
    // at lambda_grid[a]
    let per_point: Vec<(usize, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(usize, Vec<f64>)> {
            let l = fold_of[i];
            let zi = ds.z()[i];
            let train: Vec<usize> = (0..n).filter(|&t| fold_of[t] != l).collect();
            let test: Vec<usize> = (0..n).filter(|&t| fold_of[t] == l).collect();
            let sigma_train = subset_cov(ds, &train, zi, kernel)
                .map_err(|_| Error::FoldNoSupport { fold: l + 1, z: zi })?;
            let sigma_test = subset_cov(ds, &test, zi, kernel)
                .map_err(|_| Error::FoldNoSupport { fold: l + 1, z: zi })?;
            let d = ds.d();
            let eye = DMatrix::<f64>::identity(d, d);
            let mut errs = Vec::with_capacity(n_lambda);
            for &lambda in lambda_grid {
                let cfg = ClimeConfig::new(lambda);
                let est = clime_full(&sigma_train, zi, &cfg)?;
                let resid = (&sigma_test * &est.matrix - &eye).amax();
                errs.push(resid);
            }
            Ok((l, errs))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut fold_sums = vec![vec![0.0; n_lambda]; folds];
    for (l, errs) in per_point {
        for (a, e) in errs.into_iter().enumerate() {
            fold_sums[l][a] += e;
        }
    }

    let mut table = Vec::with_capacity(n_lambda);
    for a in 0..n_lambda {
        let sums: Vec<f64> = (0..folds).map(|l| fold_sums[l][a]).collect();
        let mean = sums.iter().sum::<f64>() / folds as f64;
        let var = sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (folds as f64 - 1.0);
        table.push(CvRow { lambda: lambda_grid[a], cv: mean, sd: var.sqrt() });
    }

    // minimum + 2 sd rule; smallest qualifying lambda, first occurrence wins
    let min_idx = (0..n_lambda)
        .min_by(|&i, &j| table[i].cv.partial_cmp(&table[j].cv).unwrap())
        .unwrap();
    let threshold = table[min_idx].cv + 2.0 * table[min_idx].sd;
    let mut candidates: Vec<usize> = (0..n_lambda).collect();
    candidates.sort_by(|&i, &j| {
        table[i]
            .lambda
            .partial_cmp(&table[j].lambda)
            .unwrap()
            .then(i.cmp(&j))
    });
    let star = candidates
        .into_iter()
        .find(|&i| table[i].cv <= threshold)
        .unwrap_or(min_idx);

    Ok(CvSelection { lambda_star: table[star].lambda, table })
}

fn subset_cov(
    ds: &PairedDataset,
    idx: &[usize],
    z: f64,
    kernel: &KernelSpec,
) -> Result<DMatrix<f64>> {
    let d = ds.d();
    let h = kernel.h;
    let mut num = DMatrix::<f64>::zeros(d, d);
    let mut denom = 0.0;
    for &i in idx {
        let w = kernel.eval((ds.z()[i] - z) / h) / h;
        if w > 0.0 {
            let xi = ds.x().row(i);
            let yi = ds.y().row(i);
            for a in 0..d {
                let wx = w * xi[a];
                for b in 0..d {
                    num[(a, b)] += wx * yi[b];
                }
            }
            denom += w;
        }
    }
    if denom <= 0.0 {
        return Err(Error::NoSupport { z, h });
    }
    Ok(num / denom)
}

/// Theory-scaled base rate `h^2 + sqrt(log(d/h) / (n h))` used to build
/// lambda grids.
pub fn lambda_scale(n: usize, d: usize, h: f64) -> f64 {
    h * h + ((d as f64 / h).ln() / (n as f64 * h)).sqrt()
}

/// Grid of candidate lambdas `c * lambda_scale` for constants `c`.
pub fn lambda_grid(n: usize, d: usize, h: f64, constants: &[f64]) -> Vec<f64> {
    let s = lambda_scale(n, d, h);
    constants.iter().map(|c| c * s).collect()
}

/// Default constant search used by the cross-validation shortcut.
pub const DEFAULT_LAMBDA_CONSTANTS: &[f64] = &[0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;
    use crate::kernel::KernelSpec;

    #[test]
    fn identity_column_is_shrunk_basis_vector() {
        let eye = DMatrix::<f64>::identity(5, 5);
        let theta = clime_column(&eye, 0, 0.2, 1e-8).unwrap();
        assert!((theta[0] - 0.8).abs() < 1e-8);
        for i in 1..5 {
            assert!(theta[i].abs() < 1e-10);
        }
    }

    #[test]
    fn lambda_zero_solves_exactly() {
        let m = DMatrix::<f64>::identity(4, 4) * 2.0;
        let theta = clime_column(&m, 1, 0.0, 1e-8).unwrap();
        assert!((theta[1] - 0.5).abs() < 1e-9);
        for i in [0, 2, 3] {
            assert!(theta[i].abs() < 1e-10);
        }
    }

    #[test]
    fn full_identity_case() {
        let eye = DMatrix::<f64>::identity(10, 10);
        let est = clime_full(&eye, 0.0, &ClimeConfig::new(0.2)).unwrap();
        let expect = DMatrix::<f64>::identity(10, 10) * 0.8;
        assert!((est.matrix - expect).amax() < 1e-8);
        for j in 0..10 {
            assert!(est.column_feasibility[j] <= 0.2 + 1e-8);
        }
    }

    fn random_spd(d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeding::rng_for(seed, "spd", 0);
        let m = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        &m * m.transpose() + DMatrix::identity(d, d) * d as f64 * 0.5
    }

    #[test]
    fn output_symmetrization_is_symmetric_and_shrinking() {
        let sigma = random_spd(6, 9);
        let mut cfg = ClimeConfig::new(0.05);
        cfg.symmetrize_output = SymmetrizeOutput::None;
        let raw = clime_full(&sigma, 0.0, &cfg).unwrap();
        cfg.symmetrize_output = SymmetrizeOutput::MinMagnitude;
        let sym = clime_full(&sigma, 0.0, &cfg).unwrap();
        assert!(crate::linalg::asymmetry(&sym.matrix) < 1e-12);
        for j in 0..6 {
            for k in 0..6 {
                assert!(sym.matrix[(j, k)].abs() <= raw.matrix[(j, k)].abs() + 1e-12);
            }
        }
    }

    #[test]
    fn l1_norm_monotone_in_lambda() {
        let sigma = random_spd(5, 3);
        for j in 0..5 {
            let t1 = clime_column(&sigma, j, 0.02, 1e-8).unwrap();
            let t2 = clime_column(&sigma, j, 0.1, 1e-8).unwrap();
            let n1: f64 = t1.iter().map(|v| v.abs()).sum();
            let n2: f64 = t2.iter().map(|v| v.abs()).sum();
            assert!(n1 >= n2 - 1e-8);
        }
    }

    #[test]
    fn scale_equivariance() {
        // theta solves (sigma, lambda) iff theta / c solves (c sigma, lambda)
        let sigma = random_spd(5, 4);
        let c = 3.0;
        for j in 0..5 {
            let t = clime_column(&sigma, j, 0.05, 1e-8).unwrap();
            let ts = clime_column(&(&sigma * c), j, 0.05, 1e-8).unwrap();
            assert!((ts * c - t).amax() < 1e-7);
        }
    }

    #[test]
    fn feasibility_invariant_holds() {
        let sigma = random_spd(6, 5);
        let cfg = ClimeConfig::new(0.08);
        let est = clime_full(&sigma, 0.0, &cfg).unwrap();
        for j in 0..6 {
            assert!(est.column_feasibility[j] <= cfg.lambda + cfg.lp_tolerance);
        }
    }

    fn small_dataset(seed: u64) -> PairedDataset {
        let path = data::generate_precision_path(8, 1, false, seed).unwrap();
        let lx = data::generate_nuisance(8, seed + 1).unwrap();
        let ly = data::generate_nuisance(8, seed + 2).unwrap();
        data::sample_dataset(&path, &lx, &ly, 80, 0.2, seed + 3).unwrap()
    }

    #[test]
    fn degenerate_lambda_grid_returns_that_lambda() {
        let ds = small_dataset(21);
        let k = KernelSpec::epanechnikov(0.5);
        let sel = cross_validate_lambda(&ds, &k, &[0.3], 3, 1).unwrap();
        assert_eq!(sel.lambda_star, 0.3);
        assert_eq!(sel.table.len(), 1);
    }

    #[test]
    fn duplicate_lambda_ties_break_to_first() {
        let ds = small_dataset(22);
        let k = KernelSpec::epanechnikov(0.5);
        let sel = cross_validate_lambda(&ds, &k, &[0.4, 0.4], 3, 1).unwrap();
        assert_eq!(sel.lambda_star, 0.4);
        assert_eq!(sel.table.len(), 2);
    }
}
