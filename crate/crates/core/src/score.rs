//! Closed-form noise predictions for Gaussian-mixture data.
//!
//! A mixture `q_0 = Σ w_j N(μ_j, Σ_j)` pushed through the forward process stays a
//! mixture, `q_t = Σ w_j N(α_t μ_j, α_t² Σ_j + σ_t² I)`, so the score of every
//! marginal is available exactly and `ε(x, t) = -σ_t ∇ log q_t(x)` needs no
//! learned network.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{NoiseLevel, NoiseSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

/// JSON layout of a mixture: `{weights, means, covariances}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureDoc {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::InvalidMixture(format!(
                "need matching nonzero component counts, got {} weights, {} means, {} covariances",
                k,
                means.len(),
                covariances.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidMixture("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!("weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidMixture("zero-dimensional mixture".into()));
        }
        for (j, (m, c)) in means.iter().zip(&covariances).enumerate() {
            if m.len() != dim || c.nrows() != dim || c.ncols() != dim {
                return Err(Error::InvalidMixture(format!(
                    "component {j} does not match dimension {dim}"
                )));
            }
            let asym = (c - c.transpose()).amax();
            if asym > 1e-12 * c.amax().max(1.0) {
                return Err(Error::InvalidMixture(format!("covariance {j} is not symmetric")));
            }
            if c.clone().cholesky().is_none() {
                return Err(Error::InvalidMixture(format!(
                    "covariance {j} is not positive definite"
                )));
            }
        }
        Ok(Self { weights, means, covariances })
    }

    /// Single Gaussian `N(mean, cov)`.
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![cov])
    }

    /// Equal-weight mixture with isotropic covariance `var · I` on every component.
    pub fn isotropic(means: Vec<DVector<f64>>, var: f64) -> Result<Self> {
        let n = means.len();
        let dim = means.first().map_or(0, |m| m.len());
        let covs = vec![DMatrix::identity(dim, dim) * var; n];
        Self::new(vec![1.0 / n as f64; n], means, covs)
    }

    pub fn from_doc(doc: &MixtureDoc) -> Result<Self> {
        let means = doc.means.iter().map(|m| DVector::from_vec(m.clone())).collect();
        let mut covs = Vec::with_capacity(doc.covariances.len());
        for (j, rows) in doc.covariances.iter().enumerate() {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidMixture(format!("covariance {j} is not square")));
            }
            covs.push(DMatrix::from_fn(n, n, |r, c| rows[r][c]));
        }
        Self::new(doc.weights.clone(), means, covs)
    }

    pub fn to_doc(&self) -> MixtureDoc {
        MixtureDoc {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: self
                .covariances
                .iter()
                .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_doc(&serde_json::from_str(text)?)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Component `j` becomes `N(α μ_j, α² Σ_j + σ² I)`.
    pub fn pushforward(&self, level: NoiseLevel) -> Self {
        let dim = self.dim();
        let (a, s) = (level.alpha, level.sigma);
        Self {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m * a).collect(),
            covariances: self
                .covariances
                .iter()
                .map(|c| c * (a * a) + DMatrix::identity(dim, dim) * (s * s))
                .collect(),
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        self.weights
            .iter()
            .zip(&self.means)
            .fold(DVector::zeros(self.dim()), |acc, (w, m)| acc + m * *w)
    }

    /// Total covariance `Σ w_j (Σ_j + μ_j μ_jᵀ) - μ μᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let dim = self.dim();
        let second = self.weights.iter().zip(&self.means).zip(&self.covariances).fold(
            DMatrix::zeros(dim, dim),
            |acc, ((w, m), c)| acc + (c + m * m.transpose()) * *w,
        );
        second - &mu * mu.transpose()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let prepared = Prepared::new(self);
        let mut scratch = Scratch::new(self.dim(), self.n_components());
        prepared.log_density(x, &mut scratch)
    }

    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let prepared = Prepared::new(self);
        let mut scratch = Scratch::new(self.dim(), self.n_components());
        let mut out = vec![0.0; self.dim()];
        prepared.score(x, &mut scratch, &mut out);
        out
    }

    /// Draws `n` i.i.d. points as rows of an `n × D` array.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let dim = self.dim();
        let pick = WeightedIndex::new(&self.weights).expect("weights validated at construction");
        let chols: Vec<DMatrix<f64>> = self
            .covariances
            .iter()
            .map(|c| c.clone().cholesky().expect("validated PD").l())
            .collect();
        let mut out = Array2::zeros((n, dim));
        let mut z = DVector::zeros(dim);
        for mut row in out.rows_mut() {
            let j = pick.sample(rng);
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let x = &self.means[j] + &chols[j] * &z;
            for (dst, src) in row.iter_mut().zip(x.iter()) {
                *dst = *src;
            }
        }
        out
    }
}

/// Per-component precision matrices and normalizers for one noise level.
struct Prepared {
    dim: usize,
    log_w_norm: Vec<f64>,
    means: Vec<f64>,
    precisions: Vec<f64>,
}

struct Scratch {
    diff: Vec<f64>,
    grad: Vec<f64>,
    logp: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize, n_components: usize) -> Self {
        Self { diff: vec![0.0; dim], grad: vec![0.0; dim * n_components], logp: vec![0.0; n_components] }
    }
}

impl Prepared {
    fn new(mix: &GaussianMixture) -> Self {
        let dim = mix.dim();
        let mut log_w_norm = Vec::with_capacity(mix.n_components());
        let mut means = Vec::with_capacity(dim * mix.n_components());
        let mut precisions = Vec::with_capacity(dim * dim * mix.n_components());
        for ((w, m), c) in mix.weights.iter().zip(&mix.means).zip(&mix.covariances) {
            let chol = c.clone().cholesky().expect("pushforward keeps covariances PD");
            let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            log_w_norm.push(w.ln() - 0.5 * log_det - 0.5 * dim as f64 * (2.0 * PI).ln());
            means.extend(m.iter());
            let inv = chol.inverse();
            // row-major; the inverse is symmetric so the layout is moot
            precisions.extend(inv.iter());
        }
        Self { dim, log_w_norm, means, precisions }
    }

    fn n_components(&self) -> usize {
        self.log_w_norm.len()
    }

    /// Fills `scratch.logp` with per-component log weights·densities and
    /// `scratch.grad` with per-component gradients `-P_j (x - m_j)`.
    fn components(&self, x: &[f64], scratch: &mut Scratch) {
        let d = self.dim;
        for j in 0..self.n_components() {
            let m = &self.means[j * d..(j + 1) * d];
            for ((out, xi), mi) in scratch.diff.iter_mut().zip(x).zip(m) {
                *out = xi - mi;
            }
            let p = &self.precisions[j * d * d..(j + 1) * d * d];
            let g = &mut scratch.grad[j * d..(j + 1) * d];
            let mut quad = 0.0;
            for r in 0..d {
                let row = &p[r * d..(r + 1) * d];
                let pd: f64 = row.iter().zip(&scratch.diff).map(|(a, b)| a * b).sum();
                g[r] = -pd;
                quad += scratch.diff[r] * pd;
            }
            scratch.logp[j] = self.log_w_norm[j] - 0.5 * quad;
        }
    }

    fn log_density(&self, x: &[f64], scratch: &mut Scratch) -> f64 {
        self.components(x, scratch);
        let max = scratch.logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + scratch.logp.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    fn score(&self, x: &[f64], scratch: &mut Scratch, out: &mut [f64]) {
        self.components(x, scratch);
        let d = self.dim;
        // responsibilities in log space with max subtraction
        let max = scratch.logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in scratch.logp.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..self.n_components() {
            let r = scratch.logp[j] / total;
            for (o, g) in out.iter_mut().zip(&scratch.grad[j * d..(j + 1) * d]) {
                *o += r * g;
            }
        }
    }
}

/// What produces the noise prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum EpsSource {
    /// Exact `ε` of a Gaussian-mixture data distribution.
    Mixture(GaussianMixture),
    /// `ε(x, t) = c` everywhere. Every skipping scheme is exact for it.
    Constant(Vec<f64>),
}

impl EpsSource {
    pub fn dim(&self) -> usize {
        match self {
            Self::Mixture(m) => m.dim(),
            Self::Constant(c) => c.len(),
        }
    }
}

/// Noise-prediction model with exact evaluation counting.
///
/// `point_count` is the number of points `ε` was evaluated at, `batch_count`
/// the number of calls (one call may cover many points). Both counters are
/// atomics, so concurrent batches are tallied exactly.
#[derive(Debug)]
pub struct ScoreModel {
    source: EpsSource,
    schedule: NoiseSchedule,
    points: AtomicU64,
    batches: AtomicU64,
}

impl ScoreModel {
    pub fn new(source: EpsSource, schedule: NoiseSchedule) -> Self {
        Self { source, schedule, points: AtomicU64::new(0), batches: AtomicU64::new(0) }
    }

    pub fn mixture(mixture: GaussianMixture, schedule: NoiseSchedule) -> Self {
        Self::new(EpsSource::Mixture(mixture), schedule)
    }

    pub fn constant(eps: Vec<f64>, schedule: NoiseSchedule) -> Self {
        Self::new(EpsSource::Constant(eps), schedule)
    }

    pub fn source(&self) -> &EpsSource {
        &self.source
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// Point evaluations since the last reset.
    pub fn call_count(&self) -> u64 {
        self.points.load(Ordering::Relaxed)
    }

    pub fn batch_count(&self) -> u64 {
        self.batches.load(Ordering::Relaxed)
    }

    pub fn reset_counts(&self) {
        self.points.store(0, Ordering::Relaxed);
        self.batches.store(0, Ordering::Relaxed);
    }

    /// Exact forward marginal `q_t`.
    pub fn marginal_at(&self, t: usize) -> Result<GaussianMixture> {
        self.schedule.check_index(t)?;
        match &self.source {
            EpsSource::Mixture(m) => Ok(m.pushforward(self.schedule.level(t))),
            EpsSource::Constant(_) => {
                Err(Error::Domain("a constant noise model has no data distribution".into()))
            }
        }
    }

    /// `∇_x log q_t(x)`. Not counted as a model evaluation.
    pub fn score_at(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.schedule.check_index(t)?;
        self.check_point(x)?;
        let level = self.schedule.level(t);
        Ok(match &self.source {
            EpsSource::Mixture(m) => m.pushforward(level).score(x),
            EpsSource::Constant(c) => c.iter().map(|v| -v / level.sigma).collect(),
        })
    }

    /// `ε(x, t) = -σ_t ∇ log q_t(x)`; counts one point and one batch.
    pub fn eps_pred(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.schedule.check_index(t)?;
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| Error::DimensionMismatch { expected: self.dim(), got: x.len() })?;
        let out = self.eps_batch(view, self.schedule.level(t))?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Evaluates `ε` at every row of `x` for a noise level that need not sit on
    /// the integer grid. Counts `x.nrows()` points and one batch.
    pub fn eps_batch(&self, x: ArrayView2<'_, f64>, level: NoiseLevel) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.ncols() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite state passed to the noise model".into()));
        }
        let n = x.nrows();
        let mut out = Array2::zeros(x.raw_dim());
        match &self.source {
            EpsSource::Constant(c) => {
                for mut row in out.rows_mut() {
                    row.iter_mut().zip(c).for_each(|(o, v)| *o = *v);
                }
            }
            EpsSource::Mixture(m) => {
                let marginal = m.pushforward(level);
                let prepared = Prepared::new(&marginal);
                let (dim, k) = (marginal.dim(), marginal.n_components());
                out.axis_iter_mut(Axis(0))
                    .into_par_iter()
                    .zip(x.axis_iter(Axis(0)).into_par_iter())
                    .for_each_init(
                        || (Scratch::new(dim, k), vec![0.0; dim], vec![0.0; dim]),
                        |(scratch, xin, score), (mut o, xi)| {
                            xin.iter_mut().zip(xi.iter()).for_each(|(d, s)| *d = *s);
                            prepared.score(xin, scratch, score);
                            o.iter_mut().zip(score.iter()).for_each(|(d, s)| *d = -level.sigma * s);
                        },
                    );
            }
        }
        self.points.fetch_add(n as u64, Ordering::Relaxed);
        self.batches.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }

    pub fn eps_batch_at(&self, x: ArrayView2<'_, f64>, t: usize) -> Result<Array2<f64>> {
        self.schedule.check_index(t)?;
        self.eps_batch(x, self.schedule.level(t))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite state".into()));
        }
        Ok(())
    }
}

/// Named testbeds addressable from configs and the command line.
pub mod presets {
    use super::*;

    pub const NAMES: &[&str] = &[
        "std-normal-2d",
        "bimodal-2d",
        "ring-8",
        "gaussian-2d",
        "gmm-10d",
        "constant-2d",
    ];

    pub fn std_normal_2d() -> GaussianMixture {
        GaussianMixture::gaussian(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap()
    }

    /// Means ±(2, 2), covariance 0.25·I, equal weights.
    pub fn bimodal_2d() -> GaussianMixture {
        GaussianMixture::isotropic(
            vec![DVector::from_vec(vec![2.0, 2.0]), DVector::from_vec(vec![-2.0, -2.0])],
            0.25,
        )
        .unwrap()
    }

    /// Eight equal components on a radius-4 circle, covariance 0.09·I.
    pub fn ring_8() -> GaussianMixture {
        let means = (0..8)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / 8.0;
                DVector::from_vec(vec![4.0 * a.cos(), 4.0 * a.sin()])
            })
            .collect();
        GaussianMixture::isotropic(means, 0.09).unwrap()
    }

    /// Smooth single anisotropic Gaussian used for solver convergence checks.
    pub fn gaussian_2d() -> GaussianMixture {
        GaussianMixture::gaussian(
            DVector::from_vec(vec![1.0, -0.5]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.2]),
        )
        .unwrap()
    }

    /// Three components in ten dimensions with fixed, non-axis-aligned means.
    pub fn gmm_10d() -> GaussianMixture {
        let means = (0..3)
            .map(|j| {
                DVector::from_fn(10, |i, _| {
                    let phase = (j * 10 + i) as f64;
                    2.5 * (1.3 * phase + 0.7 * j as f64).sin()
                })
            })
            .collect();
        GaussianMixture::isotropic(means, 0.2).unwrap()
    }

    pub fn constant_2d() -> Vec<f64> {
        vec![0.3, -0.2]
    }

    pub fn source(name: &str) -> Result<EpsSource> {
        Ok(match name {
            "std-normal-2d" => EpsSource::Mixture(std_normal_2d()),
            "bimodal-2d" => EpsSource::Mixture(bimodal_2d()),
            "ring-8" => EpsSource::Mixture(ring_8()),
            "gaussian-2d" => EpsSource::Mixture(gaussian_2d()),
            "gmm-10d" => EpsSource::Mixture(gmm_10d()),
            "constant-2d" => EpsSource::Constant(constant_2d()),
            other => return Err(Error::UnknownPreset(other.to_string())),
        })
    }
}
