//! Baseline step functions.
//!
//! Every solver is split in two halves so that scores can be reused across
//! intervals: [`Solver::fill_buffer`] evaluates the model at the solver's
//! internal nodes for one interval, and [`Solver::apply`] advances a state
//! over an interval using whatever scores a buffer carries, with no model
//! calls of its own. A plain step is `fill_buffer` followed by `apply` over
//! the same interval.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::buffer::ScoreBuffer;
use crate::error::{Error, Result};
use crate::rng::ChainNoise;
use crate::schedule::{GridKind, NoiseLevel, NoiseSchedule, TimeGrid};
use crate::score::ScoreModel;
use crate::trajectory::TrajectoryRecord;

/// `n_chains × D` batch of states.
pub type States = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Solver {
    /// DDIM family; `eta = 0` is the probability-flow ODE step, `eta = 1`
    /// ancestral sampling.
    Ddim {
        #[serde(default)]
        eta: f64,
    },
    /// Singlestep DPM-Solver of order 1, 2 or 3 in log-SNR time.
    DpmSolver { order: usize },
}

impl Default for Solver {
    fn default() -> Self {
        Self::Ddim { eta: 0.0 }
    }
}

/// Evaluation tally of one sampling run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NfeCount {
    pub batches: u64,
    pub points: u64,
}

impl NfeCount {
    pub(crate) fn add_batches(&mut self, batches: usize, chains: usize) {
        self.batches += batches as u64;
        self.points += (batches * chains) as u64;
    }
}

impl Solver {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Ddim { eta } if !(0.0..=1.0).contains(&eta) => {
                Err(Error::Config(format!("eta must lie in [0, 1], got {eta}")))
            }
            Self::DpmSolver { order } if !(1..=3).contains(&order) => {
                Err(Error::Config(format!("DPM-Solver order must be 1, 2 or 3, got {order}")))
            }
            _ => Ok(()),
        }
    }

    /// Scores consumed per step.
    pub fn order(&self) -> usize {
        match *self {
            Self::Ddim { .. } => 1,
            Self::DpmSolver { order } => order,
        }
    }

    pub fn eta(&self) -> f64 {
        match *self {
            Self::Ddim { eta } => eta,
            Self::DpmSolver { .. } => 0.0,
        }
    }

    /// Evaluates the model at this solver's internal nodes for a step from
    /// `(x, t_from)` to `t_to`. Costs `order()` batches.
    pub fn fill_buffer(
        &self,
        model: &ScoreModel,
        sched: &NoiseSchedule,
        x: &States,
        t_from: usize,
        t_to: usize,
    ) -> Result<ScoreBuffer> {
        check_interval(sched, t_from, t_to)?;
        let from = sched.level(t_from);
        let to = sched.level(t_to);
        let scores = dpm_nodes(model, x.view(), from, to, self.order())?;
        ScoreBuffer::new(scores, t_from, t_to)
    }

    /// The step map `φ(Q, x, t_from, t_to)`. Uses only the scores held by `q`;
    /// draws one normal vector per chain from `noise` when `eta > 0`.
    pub fn apply(
        &self,
        sched: &NoiseSchedule,
        q: &ScoreBuffer,
        x: &States,
        t_from: usize,
        t_to: usize,
        noise: &mut ChainNoise,
    ) -> Result<States> {
        check_interval(sched, t_from, t_to)?;
        if q.order() != self.order() {
            return Err(Error::Domain(format!(
                "solver of order {} given a buffer of {} scores",
                self.order(),
                q.order()
            )));
        }
        if q.scores()[0].dim() != x.dim() {
            return Err(Error::DimensionMismatch { expected: x.ncols(), got: q.scores()[0].ncols() });
        }
        match *self {
            Self::Ddim { eta } => {
                let z = if eta > 0.0 && t_to < t_from { Some(noise.standard_normal(x.ncols())) } else { None };
                ddim_step(sched, x.view(), q.scores()[0].view(), t_from, t_to, eta, z.as_ref().map(|z| z.view()))
            }
            Self::DpmSolver { order } => {
                Ok(dpm_apply(x.view(), q.scores(), sched.level(t_from), sched.level(t_to), order))
            }
        }
    }

    /// A plain step: fresh scores, then `apply` over the same interval.
    pub fn step(
        &self,
        model: &ScoreModel,
        sched: &NoiseSchedule,
        x: &States,
        t_from: usize,
        t_to: usize,
        noise: &mut ChainNoise,
    ) -> Result<(States, ScoreBuffer)> {
        let q = self.fill_buffer(model, sched, x, t_from, t_to)?;
        let next = self.apply(sched, &q, x, t_from, t_to, noise)?;
        Ok((next, q))
    }
}

fn check_interval(sched: &NoiseSchedule, t_from: usize, t_to: usize) -> Result<()> {
    sched.check_index(t_from)?;
    sched.check_index(t_to)?;
    if t_to > t_from {
        return Err(Error::Domain(format!("step must go backward in time, got {t_from} -> {t_to}")));
    }
    Ok(())
}

/// Generalized DDIM update between arbitrary grid indices.
///
/// `σ̄ = η √((1-ᾱ_to)/(1-ᾱ_from)) √(1-ᾱ_from/ᾱ_to)`; the output is
/// `√ᾱ_to (x - √(1-ᾱ_from) ε)/√ᾱ_from + √(1-ᾱ_to-σ̄²) ε + σ̄ z`.
pub fn ddim_step(
    sched: &NoiseSchedule,
    x: ArrayView2<'_, f64>,
    eps: ArrayView2<'_, f64>,
    t_from: usize,
    t_to: usize,
    eta: f64,
    noise: Option<ArrayView2<'_, f64>>,
) -> Result<States> {
    check_interval(sched, t_from, t_to)?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("eta must lie in [0, 1], got {eta}")));
    }
    if x.dim() != eps.dim() {
        return Err(Error::DimensionMismatch { expected: x.ncols(), got: eps.ncols() });
    }
    if t_from == t_to {
        return Ok(x.to_owned());
    }
    let ab_from = sched.alpha_bar()[t_from];
    let ab_to = sched.alpha_bar()[t_to];
    let sigma_bar = eta * ((1.0 - ab_to) / (1.0 - ab_from)).sqrt() * (1.0 - ab_from / ab_to).sqrt();
    let dir_var = 1.0 - ab_to - sigma_bar * sigma_bar;
    if dir_var < -1e-15 {
        return Err(Error::Domain(format!("negative direction variance {dir_var}")));
    }
    let c_x = (ab_to / ab_from).sqrt();
    let c_eps = dir_var.max(0.0).sqrt() - c_x * (1.0 - ab_from).sqrt();
    let mut out = Zip::from(&x).and(&eps).map_collect(|&x, &e| c_x * x + c_eps * e);
    if sigma_bar > 0.0 {
        let z = noise.ok_or_else(|| Error::Domain("eta > 0 needs a noise draw".into()))?;
        if z.dim() != x.dim() {
            return Err(Error::DimensionMismatch { expected: x.ncols(), got: z.ncols() });
        }
        out.zip_mut_with(&z, |o, z| *o += sigma_bar * z);
    }
    Ok(out)
}

/// First-order step written as `x_bar - gamma · ε + xi · z`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderParam {
    pub x_bar: Vec<f64>,
    pub gamma: f64,
    pub xi: f64,
}

impl FirstOrderParam {
    pub fn apply(&self, eps: &[f64]) -> Vec<f64> {
        self.x_bar.iter().zip(eps).map(|(x, e)| x - self.gamma * e).collect()
    }
}

/// DDIM (`eta = 0`) in rescale-plus-direction form.
pub fn first_order_param(
    sched: &NoiseSchedule,
    x: &[f64],
    t_from: usize,
    t_to: usize,
) -> Result<FirstOrderParam> {
    check_interval(sched, t_from, t_to)?;
    if t_from == t_to {
        return Ok(FirstOrderParam { x_bar: x.to_vec(), gamma: 0.0, xi: 0.0 });
    }
    let ab_from = sched.alpha_bar()[t_from];
    let ab_to = sched.alpha_bar()[t_to];
    let ratio = ab_to / ab_from;
    let scale = ratio.sqrt();
    Ok(FirstOrderParam {
        x_bar: x.iter().map(|v| scale * v).collect(),
        gamma: (ratio - ab_to).sqrt() - (1.0 - ab_to).sqrt(),
        xi: 0.0,
    })
}

const R2: f64 = 0.5;
const R3_1: f64 = 1.0 / 3.0;
const R3_2: f64 = 2.0 / 3.0;

/// `(e^h - 1)/h - 1`, accurate for small `h`.
fn phi2(h: f64) -> f64 {
    if h.abs() < 1e-5 {
        h / 2.0 + h * h / 6.0
    } else {
        h.exp_m1() / h - 1.0
    }
}

/// Level at `λ_from + r (λ_to - λ_from)`.
fn node(from: NoiseLevel, to: NoiseLevel, r: f64) -> NoiseLevel {
    let (lf, lt) = (from.lambda(), to.lambda());
    NoiseLevel::from_lambda(lf + r * (lt - lf))
}

/// Model evaluations at the singlestep internal nodes (order 1: start only;
/// order 2: start and midpoint; order 3: start, 1/3 and 2/3 in λ).
fn dpm_nodes(
    model: &ScoreModel,
    x: ArrayView2<'_, f64>,
    from: NoiseLevel,
    to: NoiseLevel,
    order: usize,
) -> Result<Vec<Array2<f64>>> {
    let h = to.lambda() - from.lambda();
    let eps_s = model.eps_batch(x, from)?;
    match order {
        1 => Ok(vec![eps_s]),
        2 => {
            let s1 = node(from, to, R2);
            let u = Zip::from(&x).and(&eps_s).map_collect(|&x, &e| {
                s1.alpha / from.alpha * x - s1.sigma * (R2 * h).exp_m1() * e
            });
            let eps_1 = model.eps_batch(u.view(), s1)?;
            Ok(vec![eps_s, eps_1])
        }
        3 => {
            let s1 = node(from, to, R3_1);
            let s2 = node(from, to, R3_2);
            let u1 = Zip::from(&x).and(&eps_s).map_collect(|&x, &e| {
                s1.alpha / from.alpha * x - s1.sigma * (R3_1 * h).exp_m1() * e
            });
            let eps_1 = model.eps_batch(u1.view(), s1)?;
            let c_d1 = s2.sigma * R3_2 / R3_1 * phi2(R3_2 * h);
            let u2 = Zip::from(&x).and(&eps_s).and(&eps_1).map_collect(|&x, &e0, &e1| {
                s2.alpha / from.alpha * x - s2.sigma * (R3_2 * h).exp_m1() * e0 - c_d1 * (e1 - e0)
            });
            let eps_2 = model.eps_batch(u2.view(), s2)?;
            Ok(vec![eps_s, eps_1, eps_2])
        }
        _ => Err(Error::Domain(format!("unsupported solver order {order}"))),
    }
}

/// Final update of a singlestep DPM-Solver given its stored node scores.
fn dpm_apply(
    x: ArrayView2<'_, f64>,
    scores: &[Array2<f64>],
    from: NoiseLevel,
    to: NoiseLevel,
    order: usize,
) -> States {
    let h = to.lambda() - from.lambda();
    if h == 0.0 {
        return x.to_owned();
    }
    let c_x = to.alpha / from.alpha;
    let c_e = to.sigma * h.exp_m1();
    match order {
        1 => Zip::from(&x).and(&scores[0]).map_collect(|&x, &e| c_x * x - c_e * e),
        2 => Zip::from(&x).and(&scores[1]).map_collect(|&x, &e| c_x * x - c_e * e),
        _ => {
            let c_d = to.sigma / R3_2 * phi2(h);
            Zip::from(&x)
                .and(&scores[0])
                .and(&scores[2])
                .map_collect(|&x, &e0, &e2| c_x * x - c_e * e0 - c_d * (e2 - e0))
        }
    }
}

/// One singlestep DPM-Solver step; returns the new states and the buffer of
/// node scores tagged `(t_from, t_to)`.
pub fn dpm_solver_step(
    sched: &NoiseSchedule,
    model: &ScoreModel,
    x: &States,
    t_from: usize,
    t_to: usize,
    order: usize,
) -> Result<(States, ScoreBuffer)> {
    let solver = Solver::DpmSolver { order };
    solver.validate().map_err(|e| Error::Domain(e.to_string()))?;
    // deterministic: the noise stream is never read
    let mut unused = ChainNoise::new(0, 0);
    solver.step(model, sched, x, t_from, t_to, &mut unused)
}

/// Result of a sampling run.
#[derive(Debug, Clone)]
pub struct SampleRun {
    /// States at every visited grid point, starting at `x_T`.
    pub trajectory: TrajectoryRecord,
    /// Springboard states `(t, states)` visited but not kept on the trajectory.
    pub springboards: Vec<(usize, States)>,
    pub nfe: NfeCount,
}

impl SampleRun {
    pub fn endpoint(&self) -> &States {
        self.trajectory.endpoint()
    }
}

/// Runs `solver` along every step of `grid`.
pub fn baseline_sample(
    solver: &Solver,
    model: &ScoreModel,
    sched: &NoiseSchedule,
    grid: &TimeGrid,
    x_t: &States,
    noise: &mut ChainNoise,
) -> Result<SampleRun> {
    solver.validate()?;
    let mut x = x_t.clone();
    let mut states = vec![x.clone()];
    let mut nfe = NfeCount::default();
    for w in grid.points().windows(2) {
        let (next, _) = solver.step(model, sched, &x, w[0], w[1], noise)?;
        nfe.add_batches(solver.order(), x.nrows());
        x = next;
        states.push(x.clone());
    }
    Ok(SampleRun {
        trajectory: TrajectoryRecord::new(grid.clone(), states, None)?,
        springboards: Vec::new(),
        nfe,
    })
}

/// Default reference resolution, matching a 1000-evaluation DDIM run.
pub const DEFAULT_REFERENCE_STEPS: usize = 1000;

/// Layout of a reference integration.
///
/// With `n_ref < T - 1` the reference runs on a uniform grid of `n_ref` steps.
/// Otherwise it visits every integer index and splits each unit interval into
/// `n_ref / (T - 1)` steps of equal log-SNR, so `n_ref = 1000` on a 1000-step
/// schedule is the all-index DDIM run and `n_ref = 2000` halves each step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePlan {
    pub grid: TimeGrid,
    pub substeps: usize,
}

impl ReferencePlan {
    pub fn new(sched: &NoiseSchedule, n_ref: usize) -> Result<Self> {
        if n_ref < 100 {
            return Err(Error::InvalidRange(format!("reference needs at least 100 steps, got {n_ref}")));
        }
        let top = sched.t_count() - 1;
        if n_ref < top {
            Ok(Self { grid: TimeGrid::new(GridKind::Uniform, n_ref, sched.t_count())?, substeps: 1 })
        } else {
            Ok(Self { grid: TimeGrid::new(GridKind::Uniform, top, sched.t_count())?, substeps: n_ref / top })
        }
    }

    pub fn evaluations(&self) -> usize {
        self.grid.steps() * self.substeps
    }
}

/// Deterministic DDIM (`eta = 0`) reference trajectory from `x_t`.
///
/// `keep` selects the time indices to record (all grid points when `None`);
/// every kept index must lie on the reference grid. With `with_scores`, the
/// noise prediction at each kept state is recorded as well (the one at `t = 0`
/// costs one extra evaluation).
pub fn reference_solve_at(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    x_t: &States,
    n_ref: usize,
    keep: Option<&[usize]>,
    with_scores: bool,
) -> Result<TrajectoryRecord> {
    let plan = ReferencePlan::new(sched, n_ref)?;
    let kept: Vec<usize> = match keep {
        None => plan.grid.points().to_vec(),
        Some(ts) => {
            let mut ts = ts.to_vec();
            ts.sort_unstable_by(|a, b| b.cmp(a));
            ts.dedup();
            if let Some(bad) = ts.iter().find(|t| !plan.grid.points().contains(t)) {
                return Err(Error::Alignment(format!("time {bad} is not on the reference grid")));
            }
            ts
        }
    };
    let mut states = Vec::with_capacity(kept.len());
    let mut scores = Vec::with_capacity(kept.len());
    let mut next_keep = kept.iter().peekable();
    let mut x = x_t.clone();
    let pts = plan.grid.points();
    for (i, &t) in pts.iter().enumerate() {
        let here = sched.level(t);
        let mut eps = None;
        if next_keep.peek() == Some(&&t) {
            next_keep.next();
            states.push(x.clone());
            if with_scores {
                let e = model.eps_batch(x.view(), here)?;
                scores.push(e.clone());
                eps = Some(e);
            }
        }
        let Some(&t_next) = pts.get(i + 1) else { break };
        let there = sched.level(t_next);
        for s in 0..plan.substeps {
            let a = node(here, there, s as f64 / plan.substeps as f64);
            let b = node(here, there, (s + 1) as f64 / plan.substeps as f64);
            let e = match eps.take() {
                Some(e) if s == 0 => e,
                _ => model.eps_batch(x.view(), a)?,
            };
            x = ddim_levels(x.view(), e.view(), a, b);
        }
    }
    let grid = TimeGrid::from_points(GridKind::Uniform, sched.t_count(), kept)?;
    TrajectoryRecord::new(grid, states, with_scores.then_some(scores))
}

/// Full reference trajectory, recorded at every reference grid point.
pub fn reference_solve(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    x_t: &States,
    n_ref: usize,
) -> Result<TrajectoryRecord> {
    reference_solve_at(model, sched, x_t, n_ref, None, false)
}

/// Deterministic first-order step between arbitrary noise levels.
fn ddim_levels(x: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>, from: NoiseLevel, to: NoiseLevel) -> States {
    let c_x = to.alpha / from.alpha;
    let c_e = to.sigma - c_x * from.sigma;
    Zip::from(&x).and(&eps).map_collect(|&x, &e| c_x * x + c_e * e)
}
