//! Hypothesis tests on the time-varying graph: the max-degree test, the
//! dynamic step-down procedure for monotone graph properties, and the
//! Monte-Carlo calibration and ROC studies.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::clime::{self, ClimeConfig};
use crate::data::{self, PairedDataset};
use crate::debias::{self, DebiasedField, EdgeSelector};
use crate::error::{Error, Result};
use crate::graph::{self, EdgeSet, GraphProperty};
use crate::kernel::{self, KernelSpec};
use crate::seeding;

/// How the sparsity parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaRule {
    Fixed(f64),
    /// `lambda = c (h^2 + sqrt(log(d/h)/(n h)))`
    Scaled(f64),
    CrossValidated { folds: usize },
}

#[derive(Debug, Clone)]
pub struct TestConfig {
    pub alpha: f64,
    pub b_boot: usize,
    pub grid_size: usize,
    /// bandwidth constant in `h = c n^{-1/5}`; ignored when `h` is set
    pub h_const: f64,
    pub h: Option<f64>,
    pub lambda: LambdaRule,
    pub seed: u64,
    /// `d_rej` from the union of rejected edges across the grid instead of
    /// the per-time maximum
    pub union_degree: bool,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            b_boot: 500,
            grid_size: 50,
            h_const: 1.2,
            h: None,
            lambda: LambdaRule::Scaled(0.9),
            seed: 0,
            union_degree: false,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Data(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.b_boot < 2 {
            return Err(Error::Data("need at least 2 bootstrap draws".into()));
        }
        if self.grid_size == 0 {
            return Err(Error::Data("grid size must be positive".into()));
        }
        if let Some(h) = self.h {
            if h <= 0.0 {
                return Err(Error::Data(format!("bandwidth must be positive, got {h}")));
            }
        } else if self.h_const <= 0.0 {
            return Err(Error::Data("bandwidth constant must be positive".into()));
        }
        Ok(())
    }

    pub fn bandwidth(&self, n: usize) -> f64 {
        self.h.unwrap_or_else(|| kernel::choose_bandwidth(n, self.h_const))
    }
}

/// Estimates shared by every test: smoothed covariances, precision estimates,
/// and de-biased statistics on the evaluation grid.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub grid: Vec<f64>,
    pub sigmas: Vec<DMatrix<f64>>,
    pub thetas: Vec<DMatrix<f64>>,
    pub field: DebiasedField,
    pub n: usize,
    pub d: usize,
}

impl Pipeline {
    /// `sqrt(nh) |de_e(z_t)| * kernel_mass(z_t)`, maximized over the two
    /// orientations of the unordered edge.
    pub fn edge_statistic(&self, t: usize, j: usize, k: usize) -> f64 {
        let de = &self.field.theta_de[t];
        let scale = (self.n as f64 * self.kernel.h).sqrt();
        scale * de[(j, k)].abs().max(de[(k, j)].abs()) * self.field.kernel_mass[t]
    }
}

/// Runs the estimation pipeline on the default grid.
pub fn estimate_pipeline(ds: &PairedDataset, cfg: &TestConfig) -> Result<Pipeline> {
    cfg.validate()?;
    let n = ds.n();
    let d = ds.d();
    let h = cfg.bandwidth(n);
    let kernel = KernelSpec::epanechnikov(h);
    let lambda = match cfg.lambda {
        LambdaRule::Fixed(l) => l,
        LambdaRule::Scaled(c) => c * clime::lambda_scale(n, d, h),
        LambdaRule::CrossValidated { folds } => {
            let grid = clime::lambda_grid(n, d, h, clime::DEFAULT_LAMBDA_CONSTANTS);
            clime::cross_validate_lambda(ds, &kernel, &grid, folds, cfg.seed)?.lambda_star
        }
    };
    let grid = kernel::default_grid(ds.z(), cfg.grid_size);
    // The testing pipeline keeps the raw per-column solutions: for them the
    // de-biasing denominator equals (sigma theta_j)_j, which feasibility pins
    // inside [1 - lambda, 1 + lambda]. Output symmetrization would void that.
    let mut clime_cfg = ClimeConfig::new(lambda);
    clime_cfg.symmetrize_output = clime::SymmetrizeOutput::None;

    let per_point: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, nalgebra::DVector<f64>, f64)> =
        grid.par_iter()
            .map(|&z| {
                let cov = kernel::smoothed_cov_inter(ds, z, &kernel)?;
                let sigma = 0.5 * (&cov.matrix + cov.matrix.transpose());
                let est = clime::clime_full(&sigma, z, &clime_cfg)?;
                let de = debias::debias(&est.matrix, &sigma, z)?;
                Ok((sigma, est.matrix, de.matrix, de.denom, cov.kernel_mass))
            })
            .collect::<Result<Vec<_>>>()?;

    let mut sigmas = Vec::with_capacity(grid.len());
    let mut thetas = Vec::with_capacity(grid.len());
    let mut theta_de = Vec::with_capacity(grid.len());
    let mut denom = Vec::with_capacity(grid.len());
    let mut kernel_mass = Vec::with_capacity(grid.len());
    for (sigma, theta, de, dn, mass) in per_point {
        sigmas.push(sigma);
        thetas.push(theta);
        theta_de.push(de);
        denom.push(dn);
        kernel_mass.push(mass);
    }
    let field = DebiasedField { grid: grid.clone(), theta_de, kernel_mass, denom };
    Ok(Pipeline { kernel, lambda, grid, sigmas, thetas, field, n, d })
}

/// Outcome of the max-degree test.
#[derive(Debug, Clone)]
pub struct DegreeTestOutcome {
    pub reject: bool,
    pub d_rej: usize,
    pub quantile: f64,
    /// rejected edges per grid point
    pub rejected: Vec<EdgeSet>,
    pub lambda: f64,
    pub h: f64,
}

/// Max-degree test: is the maximum degree greater than `k` somewhere on the
/// grid?
///
/// A single all-pairs bootstrap quantile thresholds the de-biased edge
/// statistics; the rejected degree is computed per grid point and maximized
/// (or over the cross-grid union of rejections when configured).
pub fn test_max_degree(ds: &PairedDataset, k: usize, cfg: &TestConfig) -> Result<DegreeTestOutcome> {
    let pipe = estimate_pipeline(ds, cfg)?;
    test_max_degree_from(ds, &pipe, k, cfg)
}

/// As [`test_max_degree`] on a precomputed pipeline.
pub fn test_max_degree_from(
    ds: &PairedDataset,
    pipe: &Pipeline,
    k: usize,
    cfg: &TestConfig,
) -> Result<DegreeTestOutcome> {
    let boot = debias::bootstrap_draws(
        ds,
        &pipe.grid,
        &pipe.thetas,
        &pipe.sigmas,
        &EdgeSelector::AllPairs,
        &pipe.kernel,
        cfg.b_boot,
        seeding::sub_seed(cfg.seed, "bootstrap-round", 0),
    )?;
    let c = boot.quantile(cfg.alpha);

    let d = pipe.d;
    let mut rejected = Vec::with_capacity(pipe.grid.len());
    for t in 0..pipe.grid.len() {
        let mut es = EdgeSet::empty(d);
        for j in 0..d {
            for k2 in (j + 1)..d {
                if pipe.edge_statistic(t, j, k2) > c {
                    es.insert(j, k2)?;
                }
            }
        }
        rejected.push(es);
    }
    let d_rej = if cfg.union_degree {
        let union = rejected
            .iter()
            .fold(EdgeSet::empty(d), |acc, es| acc.union(es));
        graph::max_degree(&union)
    } else {
        rejected.iter().map(graph::max_degree).max().unwrap_or(0)
    };
    Ok(DegreeTestOutcome {
        reject: d_rej > k,
        d_rej,
        quantile: c,
        rejected,
        lambda: pipe.lambda,
        h: pipe.kernel.h,
    })
}

/// Outcome of the step-down procedure.
#[derive(Debug, Clone)]
pub struct StepdownOutcome {
    pub reject: bool,
    /// accumulated rejected edges per grid point at the halt
    pub rejected: Vec<EdgeSet>,
    pub quantile_trace: Vec<f64>,
    pub iterations: usize,
    pub lambda: f64,
    pub h: f64,
}

/// Dynamic step-down test: does the graph satisfy the monotone property at
/// some time on the grid?
///
/// Starting from empty rejected sets, each round bootstraps the statistic over
/// the critical edge sets of the current rejections, rejects edges above the
/// quantile, and halts when the property holds at some grid point (reject) or
/// no new edge is found (accept).
pub fn stepdown_test(
    ds: &PairedDataset,
    property: &GraphProperty,
    cfg: &TestConfig,
) -> Result<StepdownOutcome> {
    let pipe = estimate_pipeline(ds, cfg)?;
    stepdown_test_from(ds, &pipe, property, cfg)
}

/// As [`stepdown_test`] on a precomputed pipeline.
pub fn stepdown_test_from(
    ds: &PairedDataset,
    pipe: &Pipeline,
    property: &GraphProperty,
    cfg: &TestConfig,
) -> Result<StepdownOutcome> {
    let d = pipe.d;
    let n_grid = pipe.grid.len();
    let mut rejected: Vec<EdgeSet> = vec![EdgeSet::empty(d); n_grid];
    let mut quantile_trace = Vec::new();
    let cap = d * d;

    let outcome = |reject: bool, rejected: Vec<EdgeSet>, trace: Vec<f64>, iters: usize| {
        StepdownOutcome {
            reject,
            rejected,
            quantile_trace: trace,
            iterations: iters,
            lambda: pipe.lambda,
            h: pipe.kernel.h,
        }
    };

    for iter in 0..=cap {
        if rejected.iter().any(|es| graph::eval_property(property, es)) {
            return Ok(outcome(true, rejected, quantile_trace, iter));
        }
        if iter == cap {
            return Err(Error::Stall { cap });
        }
        let critical: Vec<Vec<(usize, usize)>> = rejected
            .par_iter()
            .map(|es| graph::critical_set(es, property).iter().collect())
            .collect();
        if critical.iter().all(|c| c.is_empty()) {
            return Ok(outcome(false, rejected, quantile_trace, iter));
        }
        let selector = EdgeSelector::PerTime(critical.clone());
        let boot = debias::bootstrap_draws(
            ds,
            &pipe.grid,
            &pipe.thetas,
            &pipe.sigmas,
            &selector,
            &pipe.kernel,
            cfg.b_boot,
            seeding::sub_seed(cfg.seed, "bootstrap-round", iter as u64),
        )?;
        let c = boot.quantile(cfg.alpha);
        quantile_trace.push(c);

        let mut grew = false;
        for t in 0..n_grid {
            for &(j, k) in &critical[t] {
                if pipe.edge_statistic(t, j, k) > c {
                    rejected[t].insert(j, k)?;
                    grew = true;
                }
            }
        }
        if !grew {
            return Ok(outcome(false, rejected, quantile_trace, iter + 1));
        }
    }
    unreachable!()
}

// ---------------------------------------------------------------------------
// Monte-Carlo studies
// ---------------------------------------------------------------------------

/// Configuration for the size/power calibration study.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub d: usize,
    pub k_hub: usize,
    pub n_values: Vec<usize>,
    pub reps: usize,
    pub b_boot: usize,
    pub alpha: f64,
    pub nuisance_scale: f64,
    pub grid_size: usize,
    pub h_const: f64,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            d: 50,
            k_hub: 5,
            n_values: vec![400, 600, 900, 1200, 1500],
            reps: 500,
            b_boot: 500,
            alpha: 0.05,
            nuisance_scale: 1.0,
            grid_size: 50,
            h_const: 1.2,
            cv_folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CalibrationRow {
    pub n: usize,
    pub lambda: f64,
    pub type_i: f64,
    pub power: f64,
}

/// One replicate of the calibration study: generates a dataset under the null
/// or the alternative and runs the max-degree test at level `alpha`.
pub fn calibration_rep(
    cfg: &StudyConfig,
    n: usize,
    lambda: f64,
    alternative: bool,
    rep: u64,
) -> Result<bool> {
    let label = if alternative { "study-alt" } else { "study-null" };
    let base = seeding::sub_seed(cfg.seed, label, rep);
    let path = data::generate_precision_path(cfg.d, cfg.k_hub, alternative, base)?;
    let lx = data::generate_nuisance(cfg.d, seeding::sub_seed(base, "lx", 0))?;
    let ly = data::generate_nuisance(cfg.d, seeding::sub_seed(base, "ly", 0))?;
    let ds = data::sample_dataset(&path, &lx, &ly, n, cfg.nuisance_scale, base)?;
    let test_cfg = TestConfig {
        alpha: cfg.alpha,
        b_boot: cfg.b_boot,
        grid_size: cfg.grid_size,
        h_const: cfg.h_const,
        h: None,
        lambda: LambdaRule::Fixed(lambda),
        seed: seeding::sub_seed(base, "test", 0),
        union_degree: false,
    };
    Ok(test_max_degree(&ds, cfg.k_hub, &test_cfg)?.reject)
}

/// Chooses lambda for one sample size from a pilot null dataset by
/// cross-validation over the default constant grid.
pub fn pilot_lambda(cfg: &StudyConfig, n: usize) -> Result<f64> {
    let base = seeding::sub_seed(cfg.seed, "pilot", n as u64);
    let path = data::generate_precision_path(cfg.d, cfg.k_hub, false, base)?;
    let lx = data::generate_nuisance(cfg.d, seeding::sub_seed(base, "lx", 0))?;
    let ly = data::generate_nuisance(cfg.d, seeding::sub_seed(base, "ly", 0))?;
    let ds = data::sample_dataset(&path, &lx, &ly, n, cfg.nuisance_scale, base)?;
    let h = kernel::choose_bandwidth(n, cfg.h_const);
    let kernel = KernelSpec::epanechnikov(h);
    let grid = clime::lambda_grid(n, cfg.d, h, clime::DEFAULT_LAMBDA_CONSTANTS);
    Ok(clime::cross_validate_lambda(&ds, &kernel, &grid, cfg.cv_folds, base)?.lambda_star)
}

/// Empirical rejection rates of the max-degree test under the null and the
/// alternative, per sample size. Lambda is chosen once per sample size from a
/// pilot dataset and frozen across replicates.
pub fn calibration_study(cfg: &StudyConfig) -> Result<Vec<CalibrationRow>> {
    let mut rows = Vec::with_capacity(cfg.n_values.len());
    for &n in &cfg.n_values {
        let lambda = pilot_lambda(cfg, n)?;
        let rejections: Vec<(bool, bool)> = (0..cfg.reps as u64)
            .into_par_iter()
            .map(|rep| -> Result<(bool, bool)> {
                let null = calibration_rep(cfg, n, lambda, false, rep)?;
                let alt = calibration_rep(cfg, n, lambda, true, rep)?;
                Ok((null, alt))
            })
            .collect::<Result<Vec<_>>>()?;
        let type_i = rejections.iter().filter(|r| r.0).count() as f64 / cfg.reps as f64;
        let power = rejections.iter().filter(|r| r.1).count() as f64 / cfg.reps as f64;
        rows.push(CalibrationRow { n, lambda, type_i, power });
    }
    Ok(rows)
}

/// Configuration for the ROC comparison of the inter-subject and
/// within-subject estimators.
#[derive(Debug, Clone)]
pub struct RocConfig {
    pub d: usize,
    pub k_hub: usize,
    pub n: usize,
    pub reps: usize,
    pub nuisance_scale: f64,
    /// Rank-one perturbations added to the dense nuisance base matrix.
    pub nuisance_perturbations: usize,
    pub z_points: Vec<f64>,
    pub h_const: f64,
    /// Multipliers of the theory-driven lambda scale; one ROC point per value.
    pub lambda_sweep: Vec<f64>,
    pub seed: u64,
}

impl Default for RocConfig {
    fn default() -> Self {
        Self {
            d: 20,
            k_hub: 3,
            n: 900,
            reps: 20,
            nuisance_scale: 1.0,
            nuisance_perturbations: 0,
            z_points: vec![0.25, 0.5, 0.75],
            h_const: 1.2,
            lambda_sweep: default_lambda_sweep(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RocCurve {
    /// (false positive rate, true positive rate), sorted by FPR
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RocStudy {
    pub inter: RocCurve,
    pub within: RocCurve,
    /// per-query-time curves, pooled over replicates: (z, inter, within)
    pub per_z: Vec<(f64, RocCurve, RocCurve)>,
}

/// Area under the ROC curve by the rank statistic (ties get average rank).
pub fn auc(scores: &[(f64, bool)]) -> f64 {
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return f64::NAN;
    }
    let mut sorted: Vec<&(f64, bool)> = scores.iter().collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0; // 1-based ranks i+1 ..= j
        for s in &sorted[i..j] {
            if s.1 {
                rank_sum += avg_rank;
            }
        }
        i = j;
    }
    (rank_sum - pos as f64 * (pos as f64 + 1.0) / 2.0) / (pos as f64 * neg as f64)
}

/// Log-spaced multipliers covering near-unregularized to fully sparse fits.
pub fn default_lambda_sweep() -> Vec<f64> {
    let (lo, hi, m) = (0.02f64, 3.0f64, 24usize);
    (0..m)
        .map(|i| lo * (hi / lo).powf(i as f64 / (m - 1) as f64))
        .collect()
}

pub fn roc_curve(scores: &[(f64, bool)]) -> RocCurve {
    let pos = scores.iter().filter(|s| s.1).count().max(1) as f64;
    let neg = scores.iter().filter(|s| !s.1).count().max(1) as f64;
    let mut sorted: Vec<&(f64, bool)> = scores.iter().collect();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / neg, tp as f64 / pos));
        i = j;
    }
    RocCurve { points, auc: auc(scores) }
}

/// (true positives, false positives, positives, negatives)
type SweepCounts = Vec<Vec<[u64; 4]>>; // [query time][lambda index]

fn sweep_curve(counts: &SweepCounts, zi: Option<usize>) -> RocCurve {
    let n_l = counts[0].len();
    let mut points = vec![(0.0, 0.0)];
    for li in 0..n_l {
        let mut acc = [0u64; 4];
        for (z, row) in counts.iter().enumerate() {
            if zi.is_none_or(|want| want == z) {
                for (a, v) in acc.iter_mut().zip(row[li]) {
                    *a += v;
                }
            }
        }
        let [tp, fp, pos, neg] = acc;
        if pos > 0 && neg > 0 {
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    points.push((1.0, 1.0));
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    RocCurve { points, auc }
}

/// Edge-recovery ROC comparing the inter-subject estimator against the
/// within-subject baseline on the first subject. The curve is traced by
/// sweeping lambda and scoring the support of each fit against the ground
/// truth, with rates pooled over replicates.
pub fn roc_study(cfg: &RocConfig) -> Result<RocStudy> {
    let h = kernel::choose_bandwidth(cfg.n, cfg.h_const);
    let kernel = KernelSpec::epanechnikov(h);
    let scale = clime::lambda_scale(cfg.n, cfg.d, h);
    let lambdas: Vec<f64> = cfg.lambda_sweep.iter().map(|c| c * scale).collect();
    let n_z = cfg.z_points.len();
    let n_l = lambdas.len();

    let per_rep: Vec<(SweepCounts, SweepCounts)> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<(SweepCounts, SweepCounts)> {
            let base = seeding::sub_seed(cfg.seed, "roc", rep);
            let path = data::generate_precision_path(cfg.d, cfg.k_hub, true, base)?;
            let p = cfg.nuisance_perturbations;
            let lx = data::generate_nuisance_with(cfg.d, p, seeding::sub_seed(base, "lx", 0))?;
            let ly = data::generate_nuisance_with(cfg.d, p, seeding::sub_seed(base, "ly", 0))?;
            let ds = data::sample_dataset(&path, &lx, &ly, cfg.n, cfg.nuisance_scale, base)?;
            let mut inter: SweepCounts = vec![vec![[0; 4]; n_l]; n_z];
            let mut within = inter.clone();
            for (zi, &z) in cfg.z_points.iter().enumerate() {
                let truth: std::collections::BTreeSet<(usize, usize)> =
                    path.support_at(z).into_iter().collect();
                let ci = kernel::smoothed_cov_inter(&ds, z, &kernel)?;
                let cw = kernel::smoothed_cov_within(ds.x(), ds.z(), z, &kernel)?;
                for (cov, out) in [(ci, &mut inter), (cw, &mut within)] {
                    let sigma = 0.5 * (&cov.matrix + cov.matrix.transpose());
                    for (li, &lambda) in lambdas.iter().enumerate() {
                        let est = clime::clime_full(&sigma, z, &ClimeConfig::new(lambda))?;
                        let cell = &mut out[zi][li];
                        for j in 0..cfg.d {
                            for k in (j + 1)..cfg.d {
                                let selected = est.matrix[(j, k)].abs() > 1e-7;
                                let real = truth.contains(&(j, k));
                                cell[0] += (selected && real) as u64;
                                cell[1] += (selected && !real) as u64;
                                cell[2] += real as u64;
                                cell[3] += !real as u64;
                            }
                        }
                    }
                }
            }
            Ok((inter, within))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut inter: SweepCounts = vec![vec![[0; 4]; n_l]; n_z];
    let mut within = inter.clone();
    for (i, w) in per_rep {
        for zi in 0..n_z {
            for li in 0..n_l {
                for c in 0..4 {
                    inter[zi][li][c] += i[zi][li][c];
                    within[zi][li][c] += w[zi][li][c];
                }
            }
        }
    }
    let per_z = cfg
        .z_points
        .iter()
        .enumerate()
        .map(|(zi, &z)| (z, sweep_curve(&inter, Some(zi)), sweep_curve(&within, Some(zi))))
        .collect();
    Ok(RocStudy {
        inter: sweep_curve(&inter, None),
        within: sweep_curve(&within, None),
        per_z,
    })
}
