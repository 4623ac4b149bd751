//! Sample-quality and truncation-error metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite sample points, one per row, plus where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Array2<f64>,
    provenance: Option<String>,
}

impl SampleSet {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("sample set holds non-finite values".into()));
        }
        Ok(Self { points, provenance: None })
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = Some(provenance.into());
        self
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        let n = self.len() as f64;
        DVector::from_fn(self.dim(), |d, _| self.points.column(d).sum() / n)
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let n = self.len();
        let dim = self.dim();
        let mut c = DMatrix::zeros(dim, dim);
        for row in self.points.rows() {
            for r in 0..dim {
                for s in 0..dim {
                    c[(r, s)] += (row[r] - mu[r]) * (row[s] - mu[s]);
                }
            }
        }
        c / (n.max(2) - 1) as f64
    }
}

/// One entry of a run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_proj: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// PSD square root through a symmetric eigendecomposition; eigenvalues down
/// to `-1e-10 · max|λ|` are treated as rounding and clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(1e-300);
    if let Some(bad) = eig.eigenvalues.iter().find(|l| **l < -1e-10 * scale) {
        return Err(Error::NotPsd(format!("{what} has eigenvalue {bad}")));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Wasserstein-2 distance between two Gaussians:
/// `sqrt(‖m1-m2‖² + tr(C1 + C2 - 2 (C2^½ C1 C2^½)^½))`.
pub fn gaussian_w2(
    mean1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mean2: &DVector<f64>,
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    let dim = mean1.len();
    if mean2.len() != dim || cov1.shape() != (dim, dim) || cov2.shape() != (dim, dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: mean2.len() });
    }
    for (c, name) in [(cov1, "first covariance"), (cov2, "second covariance")] {
        if (c - c.transpose()).amax() > 1e-10 * c.amax().max(1.0) {
            return Err(Error::NotPsd(format!("{name} is not symmetric")));
        }
    }
    psd_sqrt(cov1, "first covariance")?;
    let root2 = psd_sqrt(cov2, "second covariance")?;
    let cross = psd_sqrt(&(&root2 * cov1 * &root2), "cross term")?;
    let mean_term = (mean1 - mean2).norm_squared();
    let trace_term = cov1.trace() + cov2.trace() - 2.0 * cross.trace();
    Ok((mean_term + trace_term).max(0.0).sqrt())
}

/// Squared 1-D Wasserstein-2 distance between two empirical measures, via
/// their quantile functions. Inputs are sorted in place.
fn w2_squared_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    if a.len() == b.len() {
        return a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    }
    // merge the two quantile step functions on their union of breakpoints
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let (mut ua, mut ub) = (1.0 / na as f64, 1.0 / nb as f64);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        let next = ua.min(ub);
        total += (next - u) * (a[i] - b[j]).powi(2);
        u = next;
        if ua <= next {
            i += 1;
            ua = (i + 1) as f64 / na as f64;
        }
        if ub <= next {
            j += 1;
            ub = (j + 1) as f64 / nb as f64;
        }
    }
    total
}

/// `n_proj` unit directions drawn from a seeded stream.
pub fn projection_directions(dim: usize, n_proj: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = Array2::zeros((n_proj, dim));
    for mut row in dirs.rows_mut() {
        loop {
            row.iter_mut().for_each(|v: &mut f64| *v = rng.sample(StandardNormal));
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row.mapv_inplace(|v| v / norm);
                break;
            }
        }
    }
    dirs
}

/// Mean over the given directions of the 1-D W2 between projected samples.
pub fn sliced_wasserstein_with(a: &SampleSet, b: &SampleSet, directions: ArrayView2<'_, f64>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    if a.dim() != b.dim() || directions.ncols() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    if directions.nrows() == 0 {
        return Err(Error::Domain("need at least one projection".into()));
    }
    // slices run in parallel; the sum runs in a fixed order
    let slices: Vec<f64> = directions
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|d| {
            let mut pa = a.points.dot(&d).to_vec();
            let mut pb = b.points.dot(&d).to_vec();
            w2_squared_1d(&mut pa, &mut pb).sqrt()
        })
        .collect();
    let total: f64 = slices.iter().sum();
    Ok(total / directions.nrows() as f64)
}

/// Sliced Wasserstein-2 distance over `n_proj` seeded random directions.
pub fn sliced_wasserstein(a: &SampleSet, b: &SampleSet, n_proj: usize, seed: u64) -> Result<f64> {
    if n_proj == 0 {
        return Err(Error::Domain("n_proj must be at least 1".into()));
    }
    let dirs = projection_directions(a.dim(), n_proj, seed);
    sliced_wasserstein_with(a, b, dirs.view())
}

/// Squared distance between paired rows.
pub fn squared_distances(traj: &Array2<f64>, reference: &Array2<f64>) -> Result<Vec<f64>> {
    if traj.dim() != reference.dim() {
        return Err(Error::Alignment(format!(
            "cannot pair {:?} endpoints with {:?} reference endpoints",
            traj.dim(),
            reference.dim()
        )));
    }
    Ok(traj
        .rows()
        .into_iter()
        .zip(reference.rows())
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum())
        .collect())
}

/// Mean and population standard deviation of a sequence, summed in order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-chain squared endpoint distance, `(mean, std)` over chains. Rows are
/// paired by chain index.
pub fn endpoint_mse(traj: &Array2<f64>, reference: &Array2<f64>) -> Result<(f64, f64)> {
    Ok(mean_std(&squared_distances(traj, reference)?))
}
