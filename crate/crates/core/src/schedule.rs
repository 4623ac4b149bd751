//! Discrete variance-preserving noise schedules and the descending time grids
//! that every sampler walks along.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signal and noise scales at one point of the forward process.
///
/// `alpha² + sigma² = 1` holds for every level produced by a [`NoiseSchedule`]
/// or by [`NoiseLevel::from_lambda`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub alpha: f64,
    pub sigma: f64,
}

impl NoiseLevel {
    /// Half log signal-to-noise ratio, `log(alpha / sigma)`.
    pub fn lambda(&self) -> f64 {
        (self.alpha / self.sigma).ln()
    }

    /// Inverts [`NoiseLevel::lambda`] on the variance-preserving circle.
    pub fn from_lambda(lambda: f64) -> Self {
        // alpha² = sigmoid(2λ), sigma² = sigmoid(-2λ)
        let alpha = (1.0 / (1.0 + (-2.0 * lambda).exp())).sqrt();
        let sigma = (1.0 / (1.0 + (2.0 * lambda).exp())).sqrt();
        Self { alpha, sigma }
    }
}

/// Linear-beta VP schedule over `T` discrete forward steps.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta_min: f64,
    beta_max: f64,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Manifest view of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: String,
    #[serde(rename = "T")]
    pub t_count: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl NoiseSchedule {
    pub const DEFAULT_T: usize = 1000;
    pub const DEFAULT_BETA_MIN: f64 = 1e-4;
    pub const DEFAULT_BETA_MAX: f64 = 0.02;

    /// `beta[i] = beta_min + i (beta_max - beta_min) / (T - 1)`, `alpha_bar` is the
    /// running product of `1 - beta`.
    pub fn vp_linear(t_count: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t_count < 2 {
            return Err(Error::InvalidRange(format!("T must be at least 2, got {t_count}")));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
            )));
        }
        let step = (beta_max - beta_min) / (t_count - 1) as f64;
        let beta: Vec<f64> = (0..t_count).map(|i| beta_min + i as f64 * step).collect();
        let alpha_bar = beta
            .iter()
            .scan(1.0_f64, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta_min, beta_max, beta, alpha_bar })
    }

    pub fn t_count(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    pub fn lambda(&self, t: usize) -> f64 {
        self.level(t).lambda()
    }

    pub fn level(&self, t: usize) -> NoiseLevel {
        NoiseLevel { alpha: self.alpha(t), sigma: self.sigma(t) }
    }

    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            kind: "vp-linear".into(),
            t_count: self.t_count(),
            beta_min: self.beta_min,
            beta_max: self.beta_max,
        }
    }

    pub(crate) fn check_index(&self, t: usize) -> Result<()> {
        if t >= self.t_count() {
            return Err(Error::InvalidRange(format!(
                "time index {t} outside [0, {}]",
                self.t_count() - 1
            )));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::vp_linear(Self::DEFAULT_T, Self::DEFAULT_BETA_MIN, Self::DEFAULT_BETA_MAX)
            .expect("default schedule parameters are valid")
    }
}

impl TryFrom<&ScheduleSpec> for NoiseSchedule {
    type Error = Error;

    fn try_from(spec: &ScheduleSpec) -> Result<Self> {
        if spec.kind != "vp-linear" {
            return Err(Error::Config(format!("unsupported schedule kind `{}`", spec.kind)));
        }
        Self::vp_linear(spec.t_count, spec.beta_min, spec.beta_max)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    #[default]
    Uniform,
    Quadratic,
}

impl std::str::FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "quadratic" => Ok(Self::Quadratic),
            other => Err(Error::Config(format!("unknown grid kind `{other}`"))),
        }
    }
}

/// Strictly decreasing time indices from `T - 1` down to `0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub kind: GridKind,
    #[serde(rename = "T")]
    pub t_count: usize,
    points: Vec<usize>,
}

impl TimeGrid {
    /// Builds an `M`-step grid. Rounded points that collide are pushed apart:
    /// first downward from the top, then upward from the `0` endpoint.
    pub fn new(kind: GridKind, steps: usize, t_count: usize) -> Result<Self> {
        if t_count < 2 || steps < 1 || steps > t_count - 1 {
            return Err(Error::InvalidRange(format!(
                "grid needs 1 <= M <= T - 1, got M={steps}, T={t_count}"
            )));
        }
        let top = (t_count - 1) as f64;
        let mut points: Vec<i64> = (0..=steps)
            .map(|i| {
                let frac = 1.0 - i as f64 / steps as f64;
                let raw = match kind {
                    GridKind::Uniform => top * frac,
                    GridKind::Quadratic => top * frac * frac,
                };
                raw.round() as i64
            })
            .collect();
        for i in 1..=steps {
            if points[i] >= points[i - 1] {
                points[i] = points[i - 1] - 1;
            }
        }
        points[steps] = 0;
        for i in (0..steps).rev() {
            if points[i] <= points[i + 1] {
                points[i] = points[i + 1] + 1;
            }
        }
        let valid = points[0] == t_count as i64 - 1 && points.windows(2).all(|w| w[0] > w[1]);
        if !valid {
            return Err(Error::GridCollision { steps, t_max: t_count - 1 });
        }
        Ok(Self { kind, t_count, points: points.into_iter().map(|p| p as usize).collect() })
    }

    /// Wraps an explicit point list after validating descent and range. The
    /// endpoints are not required to be `T - 1` and `0`, which lets callers
    /// describe sub-grids visited by a skipping sampler.
    pub fn from_points(kind: GridKind, t_count: usize, points: Vec<usize>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidRange("grid has no points".into()));
        }
        if points.iter().any(|&p| p >= t_count) || points.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidRange(format!(
                "grid points must be strictly decreasing within [0, {}]",
                t_count - 1
            )));
        }
        Ok(Self { kind, t_count, points })
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    /// Number of steps `M`; the grid holds `M + 1` points.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl std::ops::Index<usize> for TimeGrid {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.points[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_alpha_bar_is_single_factor() {
        let s = NoiseSchedule::default();
        assert_eq!(s.alpha_bar()[0], 1.0 - 1e-4);
    }

    #[test]
    fn last_alpha_bar_matches_extended_precision_product() {
        // 50-digit cumulative product of (1 - beta_i) for the default schedule.
        let oracle = 4.035_829_765_375_683_3e-5;
        let s = NoiseSchedule::default();
        let got = s.alpha_bar()[999];
        assert!(((got - oracle) / oracle).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(NoiseSchedule::vp_linear(1, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::vp_linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::vp_linear(10, 0.03, 0.02).is_err());
        assert!(NoiseSchedule::vp_linear(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn schedule_identities() {
        for sched in [
            NoiseSchedule::default(),
            NoiseSchedule::vp_linear(100, 1e-3, 0.2).unwrap(),
            NoiseSchedule::vp_linear(2, 0.5, 0.5).unwrap(),
        ] {
            for t in 0..sched.t_count() {
                let (a, s) = (sched.alpha(t), sched.sigma(t));
                assert!((a * a + s * s - 1.0).abs() < 1e-12);
                if t + 1 < sched.t_count() {
                    assert!(sched.alpha_bar()[t + 1] < sched.alpha_bar()[t]);
                    assert!(sched.lambda(t + 1) < sched.lambda(t));
                }
            }
        }
    }

    #[test]
    fn lambda_round_trip() {
        let s = NoiseSchedule::default();
        for t in [0, 10, 500, 999] {
            let lvl = NoiseLevel::from_lambda(s.lambda(t));
            assert!((lvl.alpha - s.alpha(t)).abs() < 1e-12);
            assert!((lvl.sigma - s.sigma(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_and_quadratic_examples() {
        let g = TimeGrid::new(GridKind::Uniform, 4, 1000).unwrap();
        assert_eq!(g.points(), &[999, 749, 500, 250, 0]);
        let g = TimeGrid::new(GridKind::Quadratic, 4, 1000).unwrap();
        assert_eq!(g.points(), &[999, 562, 250, 62, 0]);
    }

    #[test]
    fn grids_descend_with_fixed_endpoints() {
        for t_count in [100, 1000] {
            for steps in 1..=100.min(t_count - 1) {
                for kind in [GridKind::Uniform, GridKind::Quadratic] {
                    let g = TimeGrid::new(kind, steps, t_count).unwrap();
                    assert_eq!(g.len(), steps + 1);
                    assert_eq!(g[0], t_count - 1);
                    assert_eq!(g[steps], 0);
                    assert!(g.points().windows(2).all(|w| w[0] > w[1]));
                }
            }
        }
    }

    #[test]
    fn full_resolution_grid_uses_every_index() {
        let g = TimeGrid::new(GridKind::Quadratic, 99, 100).unwrap();
        assert_eq!(g.points(), (0..100).rev().collect::<Vec<_>>().as_slice());
        assert!(TimeGrid::new(GridKind::Uniform, 100, 100).is_err());
        assert!(TimeGrid::new(GridKind::Uniform, 0, 100).is_err());
    }

    #[test]
    fn spec_round_trip() {
        let s = NoiseSchedule::vp_linear(500, 2e-4, 0.03).unwrap();
        let json = serde_json::to_string(&s.spec()).unwrap();
        assert!(json.contains("\"T\":500"));
        let back: ScheduleSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(NoiseSchedule::try_from(&back).unwrap(), s);
    }
}
