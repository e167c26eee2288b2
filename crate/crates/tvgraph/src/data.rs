//! Datasets and the synthetic data generator.
//!
//! The generator builds a piecewise-linear precision-matrix path with anchors
//! at z in {0, 0.2, 0.5}, applies a positive-definite diagonal fix at every
//! queried time, and samples paired observations that share a common signal
//! component plus subject-specific noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, CovFactor, PrecisionFactor};
use crate::seeding;

/// Paired observations for two subjects sharing the same time indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    z: DVector<f64>,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl PairedDataset {
    pub fn new(z: DVector<f64>, x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let n = z.len();
        if n < 2 {
            return Err(Error::Data(format!("need at least 2 observations, got {n}")));
        }
        if x.nrows() != n || y.nrows() != n || x.ncols() != y.ncols() {
            return Err(Error::Data(format!(
                "shape mismatch: z has {n} entries, x is {}x{}, y is {}x{}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        if let Some(zi) = z.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Data(format!("time index {zi} outside [0,1]")));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite observation entry".into()));
        }
        Ok(Self { z, x, y })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Per-subject, per-column standardization to mean zero and unit sample
    /// standard deviation (n-1 denominator).
    pub fn standardized(&self) -> Result<Self> {
        let x = standardize_matrix(&self.x, "x")?;
        let y = standardize_matrix(&self.y, "y")?;
        Ok(Self { z: self.z.clone(), x, y })
    }
}

/// Observations for N >= 2 subjects sharing the same time indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSubjectDataset {
    z: DVector<f64>,
    subjects: Vec<DMatrix<f64>>,
}

impl MultiSubjectDataset {
    pub fn new(z: DVector<f64>, subjects: Vec<DMatrix<f64>>) -> Result<Self> {
        if subjects.len() < 2 {
            return Err(Error::Data(format!(
                "need at least 2 subjects, got {}",
                subjects.len()
            )));
        }
        let n = z.len();
        let d = subjects[0].ncols();
        for (idx, s) in subjects.iter().enumerate() {
            if s.nrows() != n || s.ncols() != d {
                return Err(Error::Data(format!(
                    "subject {} has shape {}x{}, expected {}x{}",
                    idx + 1,
                    s.nrows(),
                    s.ncols(),
                    n,
                    d
                )));
            }
        }
        Ok(Self { z, subjects })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn d(&self) -> usize {
        self.subjects[0].ncols()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn subject(&self, l: usize) -> &DMatrix<f64> {
        &self.subjects[l]
    }

    pub fn standardized(&self) -> Result<Self> {
        let subjects = self
            .subjects
            .iter()
            .enumerate()
            .map(|(l, s)| standardize_matrix(s, &format!("s{}", l + 1)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { z: self.z.clone(), subjects })
    }
}

fn standardize_matrix(m: &DMatrix<f64>, prefix: &str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let col = m.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        if var <= 0.0 {
            return Err(Error::ZeroVariance { column: format!("{}{}", prefix, j + 1) });
        }
        let sd = var.sqrt();
        for i in 0..n {
            out[(i, j)] = (m[(i, j)] - mean) / sd;
        }
    }
    Ok(out)
}

/// A time-indexed ground-truth precision-matrix generator.
///
/// Anchors hold raw off-diagonal entries (zero diagonal); the diagonal fix
/// and unit-diagonal rescale are applied per queried time point.
#[derive(Debug, Clone)]
pub struct PrecisionPath {
    anchors: Vec<(f64, DMatrix<f64>)>,
    d: usize,
    k_hub: usize,
}

impl PrecisionPath {
    pub fn from_anchors(anchors: Vec<(f64, DMatrix<f64>)>, k_hub: usize) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Construction("at least one anchor is required".into()));
        }
        let d = anchors[0].1.nrows();
        for w in anchors.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Construction(
                    "anchor times must be strictly increasing".into(),
                ));
            }
        }
        for (z, m) in &anchors {
            if *z < 0.0 || *z > 1.0 {
                return Err(Error::Construction(format!("anchor time {z} outside [0,1]")));
            }
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::Construction("anchor matrices must share shape".into()));
            }
        }
        Ok(Self { anchors, d, k_hub })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k_hub(&self) -> usize {
        self.k_hub
    }

    pub fn anchors(&self) -> &[(f64, DMatrix<f64>)] {
        &self.anchors
    }

    /// Raw interpolated off-diagonal matrix at `z` (constant extrapolation
    /// beyond the last anchor), before the diagonal fix.
    pub fn raw_at(&self, z: f64) -> DMatrix<f64> {
        let first = &self.anchors[0];
        if z <= first.0 {
            return first.1.clone();
        }
        for w in self.anchors.windows(2) {
            let (za, a) = &w[0];
            let (zb, b) = &w[1];
            if z <= *zb {
                let t = (z - za) / (zb - za);
                return a * (1.0 - t) + b * t;
            }
        }
        self.anchors.last().unwrap().1.clone()
    }

    /// Edge support of the ground-truth graph at `z` (off-diagonal pattern of
    /// the raw interpolation; unchanged by the diagonal fix and rescale).
    pub fn support_at(&self, z: f64) -> Vec<(usize, usize)> {
        let raw = self.raw_at(z);
        let mut edges = Vec::new();
        for j in 0..self.d {
            for k in (j + 1)..self.d {
                if raw[(j, k)].abs() > 1e-8 {
                    edges.push((j, k));
                }
            }
        }
        edges
    }
}

/// Evaluates the ground-truth precision matrix at `z`: linear interpolation of
/// the off-diagonal anchors followed by the diagonal fix
/// `theta_jj = |lambda_min| + 0.1` and a rescale to unit diagonal.
pub fn eval_precision(path: &PrecisionPath, z: f64) -> DMatrix<f64> {
    let mut m = path.raw_at(z);
    let lam_min = linalg::min_eigenvalue(&m).expect("anchor interpolation stays symmetric");
    let c = lam_min.abs() + 0.1;
    for j in 0..path.d() {
        m[(j, j)] = c;
    }
    m / c
}

fn support_degrees(m: &DMatrix<f64>) -> Vec<usize> {
    let d = m.nrows();
    let mut deg = vec![0usize; d];
    for j in 0..d {
        for k in (j + 1)..d {
            if m[(j, k)].abs() > 1e-8 {
                deg[j] += 1;
                deg[k] += 1;
            }
        }
    }
    deg
}

/// Generates the three-anchor precision path of the simulation protocol.
///
/// Theta(0) gets floor((d-2)/4) random off-diagonal entries at 0.3, Theta(0.2)
/// adds as many again, and Theta(0.5) augments two randomly chosen columns:
/// with `alternative` each gains `k_hub + 1` edges (forcing a hub of degree
/// greater than `k_hub`); otherwise edges are added only up to degree exactly
/// `k_hub`, skipping candidates that would push any node past `k_hub`.
pub fn generate_precision_path(
    d: usize,
    k_hub: usize,
    alternative: bool,
    seed: u64,
) -> Result<PrecisionPath> {
    if d < 8 {
        return Err(Error::Construction(format!("d must be at least 8, got {d}")));
    }
    if k_hub < 1 {
        return Err(Error::Construction("k_hub must be at least 1".into()));
    }
    if alternative && d < 2 * (k_hub + 1) + 2 {
        return Err(Error::Construction(format!(
            "d = {d} too small to give two columns {} extra edges each",
            k_hub + 1
        )));
    }
    // The null construction needs the base anchors to respect the degree
    // bound already; retry the random placement with fresh sub-streams.
    let attempts = if alternative { 1 } else { 100 };
    let mut last_err = None;
    for attempt in 0..attempts {
        match try_generate(d, k_hub, alternative, seed, attempt) {
            Ok(path) => return Ok(path),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

fn try_generate(
    d: usize,
    k_hub: usize,
    alternative: bool,
    seed: u64,
    attempt: u64,
) -> Result<PrecisionPath> {
    let mut rng = seeding::rng_for(seed, "precision-path", attempt);
    let m = (d - 2) / 4;

    let mut upper: Vec<(usize, usize)> = (0..d)
        .flat_map(|j| ((j + 1)..d).map(move |k| (j, k)))
        .collect();
    // uniform sampling without replacement over upper-triangle positions
    for i in 0..upper.len() {
        let pick = i + rng.random_range(0..upper.len() - i);
        upper.swap(i, pick);
    }

    let mut theta0 = DMatrix::<f64>::zeros(d, d);
    for &(j, k) in &upper[..m] {
        theta0[(j, k)] = 0.3;
        theta0[(k, j)] = 0.3;
    }
    let mut theta02 = theta0.clone();
    for &(j, k) in &upper[m..2 * m] {
        theta02[(j, k)] = 0.3;
        theta02[(k, j)] = 0.3;
    }

    if !alternative {
        let deg = support_degrees(&theta02);
        if deg.iter().any(|&v| v > k_hub) {
            return Err(Error::Construction(format!(
                "base anchors exceed degree {k_hub}; cannot build a null path"
            )));
        }
    }

    let c1 = rng.random_range(0..d);
    let mut c2 = rng.random_range(0..d - 1);
    if c2 >= c1 {
        c2 += 1;
    }

    let mut theta05 = theta02.clone();
    for &col in &[c1, c2] {
        let mut deg = support_degrees(&theta05);
        if alternative {
            let mut added = 0;
            let mut candidates: Vec<usize> = (0..d)
                .filter(|&w| w != col && theta05[(col, w)].abs() <= 1e-8)
                .collect();
            for i in 0..candidates.len() {
                let pick = i + rng.random_range(0..candidates.len() - i);
                candidates.swap(i, pick);
            }
            for w in candidates {
                if added == k_hub + 1 {
                    break;
                }
                theta05[(col, w)] = 0.3;
                theta05[(w, col)] = 0.3;
                added += 1;
            }
            if added < k_hub + 1 {
                return Err(Error::Construction(format!(
                    "column {col} has too few free endpoints to add {} edges",
                    k_hub + 1
                )));
            }
        } else {
            let mut candidates: Vec<usize> = (0..d)
                .filter(|&w| w != col && theta05[(col, w)].abs() <= 1e-8)
                .collect();
            for i in 0..candidates.len() {
                let pick = i + rng.random_range(0..candidates.len() - i);
                candidates.swap(i, pick);
            }
            for w in candidates {
                if deg[col] >= k_hub {
                    break;
                }
                if deg[w] >= k_hub {
                    continue;
                }
                theta05[(col, w)] = 0.3;
                theta05[(w, col)] = 0.3;
                deg[col] += 1;
                deg[w] += 1;
            }
        }
    }

    PrecisionPath::from_anchors(
        vec![(0.0, theta0), (0.2, theta02), (0.5, theta05)],
        k_hub,
    )
}

/// Subject-specific noise covariance.
#[derive(Debug, Clone)]
pub struct NuisanceCovariance {
    matrix: DMatrix<f64>,
    scale: f64,
}

impl NuisanceCovariance {
    pub fn new(matrix: DMatrix<f64>, scale: f64) -> Result<Self> {
        if scale < 0.0 {
            return Err(Error::Data("nuisance scale must be nonnegative".into()));
        }
        if linalg::asymmetry(&matrix) > 1e-8 {
            return Err(Error::Asymmetric);
        }
        let min = linalg::min_eigenvalue(&matrix)?;
        if min < -1e-8 {
            return Err(Error::Data(format!(
                "nuisance covariance is not PSD (min eigenvalue {min:.3e})"
            )));
        }
        Ok(Self { matrix, scale })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Base matrix with unit diagonal and 0.3 off-diagonals plus ten random
/// rank-one PSD perturbations.
pub fn generate_nuisance(d: usize, seed: u64) -> Result<NuisanceCovariance> {
    generate_nuisance_with(d, 10, seed)
}

/// As [`generate_nuisance`] with an explicit perturbation count (0 recovers
/// the bare base matrix).
pub fn generate_nuisance_with(d: usize, n_perturb: usize, seed: u64) -> Result<NuisanceCovariance> {
    let mut rng = seeding::rng_for(seed, "nuisance", 0);
    let mut m = DMatrix::from_element(d, d, 0.3);
    for j in 0..d {
        m[(j, j)] = 1.0;
    }
    for _ in 0..n_perturb {
        let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        m += &eps * eps.transpose();
    }
    NuisanceCovariance::new(m, 1.0)
}

/// Samples a paired dataset from the model: uniform time indices, a shared
/// signal draw from `N(0, theta(z)^{-1})`, and independent subject noise.
pub fn sample_dataset(
    path: &PrecisionPath,
    lx: &NuisanceCovariance,
    ly: &NuisanceCovariance,
    n: usize,
    nuisance_scale: f64,
    seed: u64,
) -> Result<PairedDataset> {
    if n < 2 {
        return Err(Error::Data(format!("need n >= 2, got {n}")));
    }
    if nuisance_scale < 0.0 {
        return Err(Error::Data("nuisance_scale must be nonnegative".into()));
    }
    let d = path.d();
    let fx = CovFactor::new(lx.matrix())?;
    let fy = CovFactor::new(ly.matrix())?;
    let sx = (nuisance_scale * lx.scale()).sqrt();
    let sy = (nuisance_scale * ly.scale()).sqrt();

    let mut rng = seeding::rng_for(seed, "dataset", 0);
    let z = DVector::from_fn(n, |_, _| rng.random::<f64>());

    let mut x = DMatrix::<f64>::zeros(n, d);
    let mut y = DMatrix::<f64>::zeros(n, d);
    for i in 0..n {
        let theta = eval_precision(path, z[i]);
        let pf = PrecisionFactor::new(&theta)?;
        let eps_s = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps_x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps_y = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = pf.sample_from_inverse(&eps_s)?;
        let ex = fx.apply(&eps_x) * sx;
        let ey = fy.apply(&eps_y) * sy;
        for j in 0..d {
            x[(i, j)] = s[j] + ex[j];
            y[(i, j)] = s[j] + ey[j];
        }
    }
    PairedDataset::new(z, x, y)
}
