//! Kernel functions and the smoothed covariance estimators.

use nalgebra::{DMatrix, DVector};

use crate::data::{MultiSubjectDataset, PairedDataset};
use crate::error::{Error, Result};

/// Kernel families. Only Epanechnikov ships; the enumeration leaves room for
/// others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Epanechnikov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub h: f64,
}

impl KernelSpec {
    pub fn epanechnikov(h: f64) -> Self {
        Self { family: KernelFamily::Epanechnikov, h }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::Epanechnikov => epanechnikov(u),
        }
    }
}

/// `K(u) = 0.75 (1 - u^2)` on `|u| <= 1`, zero outside.
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Rule-of-thumb bandwidth `c * n^{-1/5}`.
pub fn choose_bandwidth(n: usize, c: f64) -> f64 {
    c * (n as f64).powf(-0.2)
}

/// Kernel weights at a query time.
#[derive(Debug, Clone)]
pub struct Weights {
    pub w: DVector<f64>,
    pub kernel_mass: f64,
    pub support_fraction: f64,
}

/// `w_i = K((Z_i - z)/h)/h` with the mean weight and the fraction of
/// observations inside the bandwidth. Errors when no observation has positive
/// weight.
pub fn kernel_weights(z_obs: &DVector<f64>, z: f64, kernel: &KernelSpec) -> Result<Weights> {
    let h = kernel.h;
    if h <= 0.0 {
        return Err(Error::Data(format!("bandwidth must be positive, got {h}")));
    }
    let n = z_obs.len();
    let w = DVector::from_fn(n, |i, _| kernel.eval((z_obs[i] - z) / h) / h);
    let sum: f64 = w.sum();
    if sum <= 0.0 {
        return Err(Error::NoSupport { z, h });
    }
    let support = w.iter().filter(|v| **v > 0.0).count();
    Ok(Weights {
        w,
        kernel_mass: sum / n as f64,
        support_fraction: support as f64 / n as f64,
    })
}

/// A d x d covariance estimate at a query time, with its weight metadata.
#[derive(Debug, Clone)]
pub struct SmoothedCovariance {
    pub z: f64,
    pub matrix: DMatrix<f64>,
    pub kernel_mass: f64,
    pub support_fraction: f64,
}

fn weighted_cross(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &DVector<f64>,
) -> DMatrix<f64> {
    // sum_i w_i a_i b_i^T / sum_i w_i, restricted to rows with positive weight
    let sum: f64 = w.sum();
    let rows: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    let d = a.ncols();
    let mut wa = DMatrix::<f64>::zeros(rows.len(), d);
    let mut bs = DMatrix::<f64>::zeros(rows.len(), d);
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..d {
            wa[(r, j)] = w[i] * a[(i, j)];
            bs[(r, j)] = b[(i, j)];
        }
    }
    wa.transpose() * bs / sum
}

/// Inter-subject kernel smoothed covariance
/// `sum_i K_h(Z_i - z) X_i Y_i^T / sum_i K_h(Z_i - z)`.
///
/// The estimate is not symmetrized here; symmetrization is an option at the
/// CLIME stage.
pub fn smoothed_cov_inter(
    ds: &PairedDataset,
    z: f64,
    kernel: &KernelSpec,
) -> Result<SmoothedCovariance> {
    let wt = kernel_weights(ds.z(), z, kernel)?;
    Ok(SmoothedCovariance {
        z,
        matrix: weighted_cross(ds.x(), ds.y(), &wt.w),
        kernel_mass: wt.kernel_mass,
        support_fraction: wt.support_fraction,
    })
}

/// Within-subject baseline: `X_i X_i^T` in place of `X_i Y_i^T`.
pub fn smoothed_cov_within(
    obs: &DMatrix<f64>,
    z_obs: &DVector<f64>,
    z: f64,
    kernel: &KernelSpec,
) -> Result<SmoothedCovariance> {
    let wt = kernel_weights(z_obs, z, kernel)?;
    Ok(SmoothedCovariance {
        z,
        matrix: weighted_cross(obs, obs, &wt.w),
        kernel_mass: wt.kernel_mass,
        support_fraction: wt.support_fraction,
    })
}

/// U-statistic estimator: the average of the inter-subject estimator over all
/// unordered subject pairs.
pub fn smoothed_cov_ustat(
    ds: &MultiSubjectDataset,
    z: f64,
    kernel: &KernelSpec,
) -> Result<SmoothedCovariance> {
    let wt = kernel_weights(ds.z(), z, kernel)?;
    let n_sub = ds.n_subjects();
    let d = ds.d();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut pairs = 0usize;
    for l in 0..n_sub {
        for lp in (l + 1)..n_sub {
            acc += weighted_cross(ds.subject(l), ds.subject(lp), &wt.w);
            pairs += 1;
        }
    }
    Ok(SmoothedCovariance {
        z,
        matrix: acc / pairs as f64,
        kernel_mass: wt.kernel_mass,
        support_fraction: wt.support_fraction,
    })
}

/// Evenly spaced evaluation grid on `[min Z_i, max Z_i]`.
pub fn default_grid(z_obs: &DVector<f64>, size: usize) -> Vec<f64> {
    let zmin = z_obs.iter().cloned().fold(f64::INFINITY, f64::min);
    let zmax = z_obs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if size == 1 {
        return vec![0.5 * (zmin + zmax)];
    }
    (0..size)
        .map(|i| zmin + (zmax - zmin) * i as f64 / (size - 1) as f64)
        .collect()
}

/// Smallest support fraction over a grid; callers compare against the rule of
/// keeping at least 30% of the time points inside the bandwidth.
pub fn min_support_fraction(z_obs: &DVector<f64>, kernel: &KernelSpec, grid: &[f64]) -> f64 {
    grid.iter()
        .map(|&z| match kernel_weights(z_obs, z, kernel) {
            Ok(w) => w.support_fraction,
            Err(_) => 0.0,
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;
    use approx::assert_relative_eq;

    #[test]
    fn epanechnikov_values() {
        assert_relative_eq!(epanechnikov(0.0), 0.75);
        assert_relative_eq!(epanechnikov(1.0), 0.0);
        assert_relative_eq!(epanechnikov(-1.0), 0.0);
        assert_relative_eq!(epanechnikov(0.5), 0.5625);
        assert_relative_eq!(epanechnikov(2.0), 0.0);
    }

    #[test]
    fn kernel_integrates_to_one_with_zero_mean() {
        // 10000-point midpoint quadrature over [-1, 1]
        let n = 10_000;
        let (mut mass, mut mean) = (0.0, 0.0);
        for i in 0..n {
            let u = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
            let k = epanechnikov(u);
            mass += k * 2.0 / n as f64;
            mean += u * k * 2.0 / n as f64;
        }
        assert!((mass - 1.0).abs() < 1e-6);
        assert!(mean.abs() < 1e-6);
    }

    #[test]
    fn single_observation_weight() {
        let z = DVector::from_vec(vec![0.4]);
        let k = KernelSpec::epanechnikov(0.2);
        let wt = kernel_weights(&z, 0.4, &k).unwrap();
        assert_relative_eq!(wt.w[0], 0.75 / 0.2, epsilon = 1e-12);
    }

    #[test]
    fn no_support_is_an_error() {
        let z = DVector::from_vec(vec![0.0, 0.05]);
        let k = KernelSpec::epanechnikov(0.1);
        assert!(matches!(
            kernel_weights(&z, 0.9, &k),
            Err(Error::NoSupport { .. })
        ));
    }

    #[test]
    fn full_support_fraction() {
        let z = DVector::from_vec(vec![0.0, 0.5, 1.0]);
        let k = KernelSpec::epanechnikov(0.6);
        let wt = kernel_weights(&z, 0.5, &k).unwrap();
        assert_relative_eq!(wt.support_fraction, 1.0);
    }

    #[test]
    fn bandwidth_rule_values() {
        assert!((choose_bandwidth(945, 1.2) - 0.3049).abs() < 5e-4);
        assert_relative_eq!(choose_bandwidth(32, 1.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            choose_bandwidth(500, 2.4),
            2.0 * choose_bandwidth(500, 1.2),
            epsilon = 1e-12
        );
    }

    fn toy_dataset(seed: u64, n: usize, d: usize) -> PairedDataset {
        let path = data::generate_precision_path(d.max(8), 1, false, seed).unwrap();
        let lx = data::generate_nuisance(d.max(8), seed + 1).unwrap();
        let ly = data::generate_nuisance(d.max(8), seed + 2).unwrap();
        data::sample_dataset(&path, &lx, &ly, n, 0.5, seed + 3).unwrap()
    }

    use crate::data::PairedDataset;

    #[test]
    fn inter_estimate_invariant_to_observation_order() {
        let ds = toy_dataset(1, 40, 8);
        let k = KernelSpec::epanechnikov(0.4);
        let a = smoothed_cov_inter(&ds, 0.5, &k).unwrap();

        // reverse observation order
        let n = ds.n();
        let rz = DVector::from_fn(n, |i, _| ds.z()[n - 1 - i]);
        let rx = DMatrix::from_fn(n, ds.d(), |i, j| ds.x()[(n - 1 - i, j)]);
        let ry = DMatrix::from_fn(n, ds.d(), |i, j| ds.y()[(n - 1 - i, j)]);
        let rds = PairedDataset::new(rz, rx, ry).unwrap();
        let b = smoothed_cov_inter(&rds, 0.5, &k).unwrap();
        assert!((a.matrix - b.matrix).amax() < 1e-12);
    }

    #[test]
    fn swapping_subjects_transposes_the_estimate() {
        let ds = toy_dataset(2, 40, 8);
        let k = KernelSpec::epanechnikov(0.4);
        let a = smoothed_cov_inter(&ds, 0.5, &k).unwrap();
        let swapped =
            PairedDataset::new(ds.z().clone(), ds.y().clone(), ds.x().clone()).unwrap();
        let b = smoothed_cov_inter(&swapped, 0.5, &k).unwrap();
        assert!((a.matrix.transpose() - b.matrix).amax() < 1e-12);
    }

    #[test]
    fn within_estimate_is_symmetric() {
        let ds = toy_dataset(3, 40, 8);
        let k = KernelSpec::epanechnikov(0.4);
        let a = smoothed_cov_within(ds.x(), ds.z(), 0.5, &k).unwrap();
        assert!(crate::linalg::asymmetry(&a.matrix) < 1e-12);
    }

    #[test]
    fn ustat_with_two_subjects_equals_inter() {
        let ds = toy_dataset(4, 30, 8);
        let k = KernelSpec::epanechnikov(0.4);
        let inter = smoothed_cov_inter(&ds, 0.5, &k).unwrap();
        let multi = MultiSubjectDataset::new(
            ds.z().clone(),
            vec![ds.x().clone(), ds.y().clone()],
        )
        .unwrap();
        let u = smoothed_cov_ustat(&multi, 0.5, &k).unwrap();
        assert!((inter.matrix - u.matrix).amax() < 1e-12);
    }

    #[test]
    fn ustat_three_subjects_is_pairwise_mean() {
        let ds = toy_dataset(5, 30, 8);
        let third = ds.x().clone() * 0.5 + ds.y().clone() * 0.5;
        let k = KernelSpec::epanechnikov(0.4);
        let multi = MultiSubjectDataset::new(
            ds.z().clone(),
            vec![ds.x().clone(), ds.y().clone(), third.clone()],
        )
        .unwrap();
        let u = smoothed_cov_ustat(&multi, 0.5, &k).unwrap();

        let pair = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let p = PairedDataset::new(ds.z().clone(), a.clone(), b.clone()).unwrap();
            smoothed_cov_inter(&p, 0.5, &k).unwrap().matrix
        };
        let mean = (pair(ds.x(), ds.y()) + pair(ds.x(), &third) + pair(ds.y(), &third)) / 3.0;
        assert!((u.matrix - mean).amax() < 1e-12);
    }

    #[test]
    fn identical_subjects_reduce_to_within() {
        let ds = toy_dataset(6, 30, 8);
        let k = KernelSpec::epanechnikov(0.4);
        let multi = MultiSubjectDataset::new(
            ds.z().clone(),
            vec![ds.x().clone(), ds.x().clone()],
        )
        .unwrap();
        let u = smoothed_cov_ustat(&multi, 0.5, &k).unwrap();
        let w = smoothed_cov_within(ds.x(), ds.z(), 0.5, &k).unwrap();
        assert!((u.matrix - w.matrix).amax() < 1e-12);
    }

    #[test]
    fn grid_spans_observed_range() {
        let z = DVector::from_vec(vec![0.2, 0.9, 0.4]);
        let g = default_grid(&z, 5);
        assert_eq!(g.len(), 5);
        assert_relative_eq!(g[0], 0.2);
        assert_relative_eq!(g[4], 0.9);
    }
}
