//! De-biased edge statistics, the sup-max test statistic, and the Gaussian
//! multiplier bootstrap with conditional quantiles.

use nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;
use rand::Rng;
use rayon::prelude::*;

use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::kernel::{kernel_weights, KernelSpec};
use crate::seeding;

/// Guard below which the de-biasing denominator is treated as degenerate.
pub const DENOMINATOR_GUARD: f64 = 1e-6;

/// De-biased matrix at one time point together with the per-column
/// denominators `theta_j^T sigma_j`.
#[derive(Debug, Clone)]
pub struct Debiased {
    pub matrix: DMatrix<f64>,
    pub denom: DVector<f64>,
}

/// One-step de-biasing correction:
/// `de_jk = theta_jk - theta_j^T (sigma theta_k - e_k) / (theta_j^T sigma_j)`.
pub fn debias(theta: &DMatrix<f64>, sigma: &DMatrix<f64>, z: f64) -> Result<Debiased> {
    let d = theta.nrows();
    let denom = DVector::from_fn(d, |j, _| theta.column(j).dot(&sigma.column(j)));
    if let Some(j) = (0..d).find(|&j| denom[j].abs() < DENOMINATOR_GUARD) {
        return Err(Error::DegenerateDenominator { z, j, value: denom[j] });
    }
    let mut residual = sigma * theta;
    for j in 0..d {
        residual[(j, j)] -= 1.0;
    }
    let correction = theta.transpose() * residual;
    let mut matrix = theta.clone();
    for j in 0..d {
        for k in 0..d {
            matrix[(j, k)] -= correction[(j, k)] / denom[j];
        }
    }
    Ok(Debiased { matrix, denom })
}

/// De-biased edge statistics on a time grid.
#[derive(Debug, Clone)]
pub struct DebiasedField {
    pub grid: Vec<f64>,
    pub theta_de: Vec<DMatrix<f64>>,
    pub kernel_mass: Vec<f64>,
    pub denom: Vec<DVector<f64>>,
}

/// Which edges enter the sup-max statistics.
#[derive(Debug, Clone)]
pub enum EdgeSelector {
    /// All unordered pairs at every grid point.
    AllPairs,
    /// Explicit unordered edge list per grid point.
    PerTime(Vec<Vec<(usize, usize)>>),
}

impl EdgeSelector {
    pub fn edges_at(&self, t: usize, d: usize) -> Vec<(usize, usize)> {
        match self {
            EdgeSelector::AllPairs => (0..d)
                .flat_map(|j| ((j + 1)..d).map(move |k| (j, k)))
                .collect(),
            EdgeSelector::PerTime(sets) => sets[t].clone(),
        }
    }

    pub fn is_empty(&self, n_grid: usize, d: usize) -> bool {
        match self {
            EdgeSelector::AllPairs => d < 2 || n_grid == 0,
            EdgeSelector::PerTime(sets) => sets.iter().all(|s| s.is_empty()),
        }
    }
}

/// Grid maximum of
/// `sqrt(nh) |de_jk(z) - ref_jk(z)| * kernel_mass(z)` over the selected
/// edges. Unordered edges score the larger of their two orientations.
pub fn test_statistic(
    field: &DebiasedField,
    selector: &EdgeSelector,
    theta_ref: Option<&[DMatrix<f64>]>,
    n: usize,
    h: f64,
) -> Result<f64> {
    let d = field.theta_de.first().map_or(0, |m| m.nrows());
    if selector.is_empty(field.grid.len(), d) {
        return Err(Error::EmptySelector);
    }
    let scale = (n as f64 * h).sqrt();
    let mut best = f64::NEG_INFINITY;
    let mut any = false;
    for t in 0..field.grid.len() {
        let de = &field.theta_de[t];
        let mass = field.kernel_mass[t];
        for (j, k) in selector.edges_at(t, d) {
            any = true;
            let (rjk, rkj) = match theta_ref {
                Some(r) => (r[t][(j, k)], r[t][(k, j)]),
                None => (0.0, 0.0),
            };
            let v = (de[(j, k)] - rjk).abs().max((de[(k, j)] - rkj).abs());
            best = best.max(scale * v * mass);
        }
    }
    if !any {
        return Err(Error::EmptySelector);
    }
    Ok(best)
}

/// Bootstrap draws of the sup-max statistic.
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub samples: Vec<f64>,
    sorted: Vec<f64>,
    pub b: usize,
    pub seed: u64,
}

impl BootstrapResult {
    fn new(samples: Vec<f64>, seed: u64) -> Self {
        let b = samples.len();
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self { samples, sorted, b, seed }
    }

    /// Conditional `(1-alpha)` quantile: the `ceil((1-alpha) B)`-th smallest
    /// sample.
    pub fn quantile(&self, alpha: f64) -> f64 {
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
        let rank = ((1.0 - alpha) * self.b as f64).ceil() as usize;
        let rank = rank.clamp(1, self.b);
        self.sorted[rank - 1]
    }
}

/// Draws the standard-normal multiplier matrix (`b` outer, `i` inner).
pub fn draw_multipliers(n: usize, b: usize, seed: u64) -> DMatrix<f64> {
    let mut xi = DMatrix::<f64>::zeros(b, n);
    for bi in 0..b {
        let mut rng = seeding::rng_for(seed, "bootstrap", bi as u64);
        for i in 0..n {
            xi[(bi, i)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    xi
}

/// Gaussian multiplier bootstrap of the sup-max statistic.
///
/// `thetas` and `sigmas` are the per-grid-point precision estimates and the
/// smoothed covariances they were fit to; multipliers are shared across grid
/// points and edges within one draw.
pub fn bootstrap_draws(
    ds: &PairedDataset,
    grid: &[f64],
    thetas: &[DMatrix<f64>],
    sigmas: &[DMatrix<f64>],
    selector: &EdgeSelector,
    kernel: &KernelSpec,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    let xi = draw_multipliers(ds.n(), b, seed);
    bootstrap_draws_with(ds, grid, thetas, sigmas, selector, kernel, &xi, seed)
}

/// As [`bootstrap_draws`] with explicit multipliers; the test hook behind the
/// determinism and sign-invariance contracts.
pub fn bootstrap_draws_with(
    ds: &PairedDataset,
    grid: &[f64],
    thetas: &[DMatrix<f64>],
    sigmas: &[DMatrix<f64>],
    selector: &EdgeSelector,
    kernel: &KernelSpec,
    xi: &DMatrix<f64>,
    seed: u64,
) -> Result<BootstrapResult> {
    let n = ds.n();
    let d = ds.d();
    let b = xi.nrows();
    assert_eq!(xi.ncols(), n);
    assert_eq!(grid.len(), thetas.len());
    assert_eq!(grid.len(), sigmas.len());
    if selector.is_empty(grid.len(), d) {
        return Err(Error::EmptySelector);
    }
    let scale = (n as f64 * kernel.h).sqrt() / n as f64;

    let per_grid: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|t| -> Result<Vec<f64>> {
            let edges = selector.edges_at(t, d);
            if edges.is_empty() {
                return Ok(vec![f64::NEG_INFINITY; b]);
            }
            let z = grid[t];
            let theta = &thetas[t];
            let sigma = &sigmas[t];
            let denom = DVector::from_fn(d, |j, _| theta.column(j).dot(&sigma.column(j)));
            if let Some(j) = (0..d).find(|&j| denom[j].abs() < DENOMINATOR_GUARD) {
                return Err(Error::DegenerateDenominator { z, j, value: denom[j] });
            }
            let wt = kernel_weights(ds.z(), z, kernel)?;
            let idx: Vec<usize> = (0..n).filter(|&i| wt.w[i] > 0.0).collect();
            let ne = idx.len();

            // u_i = theta^T x_i rows, v_i = theta^T y_i rows
            let mut xs = DMatrix::<f64>::zeros(ne, d);
            let mut ys = DMatrix::<f64>::zeros(ne, d);
            let mut xis = DMatrix::<f64>::zeros(b, ne);
            let mut a = DVector::<f64>::zeros(ne);
            for (r, &i) in idx.iter().enumerate() {
                a[r] = wt.w[i];
                for j in 0..d {
                    xs[(r, j)] = ds.x()[(i, j)];
                    ys[(r, j)] = ds.y()[(i, j)];
                }
                for bi in 0..b {
                    xis[(bi, r)] = xi[(bi, i)];
                }
            }
            let u = &xs * theta;
            let v = &ys * theta;

            // ordered pairs: both orientations of each unordered edge
            let mut ordered: Vec<(usize, usize)> = Vec::with_capacity(2 * edges.len());
            for &(j, k) in &edges {
                ordered.push((j, k));
                ordered.push((k, j));
            }

            let mut p = DMatrix::<f64>::zeros(ne, ordered.len());
            for (c, &(j, k)) in ordered.iter().enumerate() {
                for r in 0..ne {
                    p[(r, c)] = a[r] * u[(r, j)] * v[(r, k)];
                }
            }
            let m = &xis * p; // b x |ordered|
            let s = &xis * a; // b

            let mut maxima = vec![f64::NEG_INFINITY; b];
            for bi in 0..b {
                let mut best = f64::NEG_INFINITY;
                for (c, &(j, k)) in ordered.iter().enumerate() {
                    let num = m[(bi, c)] - theta[(k, j)] * s[bi];
                    let val = scale * (num / denom[j]).abs();
                    best = best.max(val);
                }
                maxima[bi] = best;
            }
            Ok(maxima)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut samples = vec![f64::NEG_INFINITY; b];
    for per in &per_grid {
        for (s, &v) in samples.iter_mut().zip(per.iter()) {
            *s = s.max(v);
        }
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::EmptySelector);
    }
    Ok(BootstrapResult::new(samples, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;

    #[test]
    fn debias_is_identity_when_product_is_identity() {
        // sigma = theta^{-1} exactly
        let theta = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.5, 0.2, 0.0, 0.2, 1.0]);
        let sigma = theta.clone().try_inverse().unwrap();
        let de = debias(&theta, &sigma, 0.5).unwrap();
        assert!((de.matrix - &theta).amax() < 1e-10);
    }

    #[test]
    fn debias_hand_case() {
        // sigma = I, theta = 0.8 I: de_jj = 0.8 - 0.8(0.8-1)/0.8 = 1.0
        let sigma = DMatrix::<f64>::identity(4, 4);
        let theta = DMatrix::<f64>::identity(4, 4) * 0.8;
        let de = debias(&theta, &sigma, 0.0).unwrap();
        for j in 0..4 {
            assert!((de.matrix[(j, j)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn debias_matches_entrywise_transcription() {
        let mut rng = crate::seeding::rng_for(3, "debias-test", 0);
        let d = 5;
        let theta = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() + 0.2);
        let sigma = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() + 0.2)
            + DMatrix::identity(d, d) * 2.0;
        let de = debias(&theta, &sigma, 0.0).unwrap();
        for j in 0..d {
            for k in 0..d {
                // literal transcription, entry by entry
                let mut stheta_k = DVector::<f64>::zeros(d);
                for r in 0..d {
                    for c in 0..d {
                        stheta_k[r] += sigma[(r, c)] * theta[(c, k)];
                    }
                }
                stheta_k[k] -= 1.0;
                let mut num = 0.0;
                let mut den = 0.0;
                for r in 0..d {
                    num += theta[(r, j)] * stheta_k[r];
                    den += theta[(r, j)] * sigma[(r, j)];
                }
                let expect = theta[(j, k)] - num / den;
                assert!((de.matrix[(j, k)] - expect).abs() < 1e-12);
            }
        }
    }

    fn single_point_field(de_val: f64, mass: f64) -> DebiasedField {
        let mut m = DMatrix::<f64>::zeros(2, 2);
        m[(0, 1)] = de_val;
        m[(1, 0)] = de_val;
        DebiasedField {
            grid: vec![0.5],
            theta_de: vec![m],
            kernel_mass: vec![mass],
            denom: vec![DVector::from_element(2, 1.0)],
        }
    }

    #[test]
    fn test_statistic_arithmetic() {
        // sqrt(100 * 0.25) * 0.2 * 0.9 = 5 * 0.18 = 0.9
        let field = single_point_field(0.2, 0.9);
        let sel = EdgeSelector::AllPairs;
        let t = test_statistic(&field, &sel, None, 100, 0.25).unwrap();
        assert!((t - 0.9).abs() < 1e-12);
    }

    #[test]
    fn test_statistic_vanishes_at_reference() {
        let field = single_point_field(0.2, 0.9);
        let sel = EdgeSelector::AllPairs;
        let t = test_statistic(&field, &sel, Some(&field.theta_de), 100, 0.25).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn test_statistic_linear_in_kernel_mass() {
        let sel = EdgeSelector::AllPairs;
        let a = test_statistic(&single_point_field(0.2, 0.9), &sel, None, 100, 0.25).unwrap();
        let b = test_statistic(&single_point_field(0.2, 1.8), &sel, None, 100, 0.25).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }

    #[test]
    fn test_statistic_ignores_duplicate_edges() {
        let field = single_point_field(0.2, 0.9);
        let dup = EdgeSelector::PerTime(vec![vec![(0, 1), (0, 1), (1, 0)]]);
        let single = EdgeSelector::PerTime(vec![vec![(0, 1)]]);
        let a = test_statistic(&field, &dup, None, 100, 0.25).unwrap();
        let b = test_statistic(&field, &single, None, 100, 0.25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_selector_is_an_error() {
        let field = single_point_field(0.2, 0.9);
        let sel = EdgeSelector::PerTime(vec![vec![]]);
        assert!(matches!(
            test_statistic(&field, &sel, None, 100, 0.25),
            Err(Error::EmptySelector)
        ));
    }

    #[test]
    fn quantile_order_statistic() {
        let r = BootstrapResult::new(vec![3.0, 1.0, 5.0, 2.0, 4.0], 0);
        assert_eq!(r.quantile(0.2), 4.0); // ceil(0.8*5) = 4th smallest
        let c = BootstrapResult::new(vec![7.0; 10], 0);
        assert_eq!(c.quantile(0.5), 7.0);
        assert_eq!(c.quantile(0.01), 7.0);
        assert!(r.quantile(0.05) >= r.quantile(0.5));
    }

    fn pipeline_inputs(
        seed: u64,
    ) -> (PairedDataset, Vec<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, KernelSpec) {
        let d = 8;
        let path = data::generate_precision_path(d, 1, true, seed).unwrap();
        let lx = data::generate_nuisance(d, seed + 1).unwrap();
        let ly = data::generate_nuisance(d, seed + 2).unwrap();
        let ds = data::sample_dataset(&path, &lx, &ly, 60, 0.2, seed + 3).unwrap();
        let kernel = KernelSpec::epanechnikov(0.45);
        let grid = crate::kernel::default_grid(ds.z(), 5);
        let mut cfg = crate::clime::ClimeConfig::new(0.4);
        cfg.symmetrize_output = crate::clime::SymmetrizeOutput::None;
        let mut thetas = Vec::new();
        let mut sigmas = Vec::new();
        for &z in &grid {
            let cov = crate::kernel::smoothed_cov_inter(&ds, z, &kernel).unwrap();
            let sym = 0.5 * (&cov.matrix + cov.matrix.transpose());
            let est = crate::clime::clime_full(&sym, z, &cfg).unwrap();
            thetas.push(est.matrix);
            sigmas.push(sym);
        }
        (ds, grid, thetas, sigmas, kernel)
    }

    #[test]
    fn zero_multipliers_give_zero_draws() {
        let (ds, grid, thetas, sigmas, kernel) = pipeline_inputs(5);
        let xi = DMatrix::<f64>::zeros(1, ds.n());
        let r = bootstrap_draws_with(
            &ds,
            &grid,
            &thetas,
            &sigmas,
            &EdgeSelector::AllPairs,
            &kernel,
            &xi,
            0,
        )
        .unwrap();
        assert_eq!(r.samples, vec![0.0]);
    }

    #[test]
    fn fixed_seed_reproduces_samples() {
        let (ds, grid, thetas, sigmas, kernel) = pipeline_inputs(6);
        let sel = EdgeSelector::AllPairs;
        let a = bootstrap_draws(&ds, &grid, &thetas, &sigmas, &sel, &kernel, 20, 13).unwrap();
        let b = bootstrap_draws(&ds, &grid, &thetas, &sigmas, &sel, &kernel, 20, 13).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn negating_multipliers_leaves_draws_unchanged() {
        let (ds, grid, thetas, sigmas, kernel) = pipeline_inputs(7);
        let sel = EdgeSelector::AllPairs;
        let xi = draw_multipliers(ds.n(), 10, 21);
        let a = bootstrap_draws_with(&ds, &grid, &thetas, &sigmas, &sel, &kernel, &xi, 0).unwrap();
        let neg = -xi;
        let b = bootstrap_draws_with(&ds, &grid, &thetas, &sigmas, &sel, &kernel, &neg, 0).unwrap();
        for (x, y) in a.samples.iter().zip(b.samples.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
