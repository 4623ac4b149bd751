//! Past/future-score timestep skipping around any solver step map.
//!
//! One iteration starting from `x_i` at `t_i`:
//!
//! 1. **springboard**: step to `t_{i+h}` with the scores already in the buffer
//!    (computed on the previous interval), no model call;
//! 2. **refill**: evaluate the model at the springboard over
//!    `(t_{i+h}, t_{i+k+1})`, overwriting the buffer;
//! 3. **foresight jump**: for first-order solvers, step from the *current*
//!    state `x_i` all the way to `t_{i+k+1}` using the springboard scores; for
//!    higher-order solvers, step from the springboard instead.
//!
//! The refilled buffer is the "past" buffer of the next iteration, so each
//! iteration costs one batch of `p` evaluations while advancing `k + 1` grid
//! steps.

use serde::{Deserialize, Serialize};

use crate::buffer::ScoreBuffer;
use crate::error::{Error, Result};
use crate::rng::ChainNoise;
use crate::schedule::{GridKind, NoiseSchedule, TimeGrid};
use crate::score::ScoreModel;
use crate::solvers::{baseline_sample, NfeCount, SampleRun, Solver, States};
use crate::trajectory::TrajectoryRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Springboard from past scores, foresight jump with future scores.
    #[default]
    Full,
    /// Accept each springboard and continue from it; no anchoring at the
    /// current state.
    PastOnly,
    /// Fresh score at the current state drives a look-ahead; the score at the
    /// look-ahead point then drives a jump anchored at the current state.
    FutureOnly,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "past-only" => Ok(Self::PastOnly),
            "future-only" => Ok(Self::FutureOnly),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::PastOnly => "past-only",
            Self::FutureOnly => "future-only",
        })
    }
}

/// `PFDiff-k_h` settings. `nfe` is the budget `N` in model batches; each batch
/// holds `p = solver.order()` point evaluations per chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PFDiffConfig {
    pub k: usize,
    pub h: usize,
    #[serde(rename = "N")]
    pub nfe: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub solver: Solver,
}

impl PFDiffConfig {
    pub fn new(k: usize, h: usize, nfe: usize) -> Self {
        Self { k, h, nfe, mode: Mode::Full, solver: Solver::default() }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_solver(mut self, solver: Solver) -> Self {
        self.solver = solver;
        self
    }

    pub fn order(&self) -> usize {
        self.solver.order()
    }

    pub fn eta(&self) -> f64 {
        self.solver.eta()
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(1..=3).contains(&self.k) {
            return Err(Error::Config(format!("k must be 1, 2 or 3, got {}", self.k)));
        }
        if self.h < 1 || self.h > self.k {
            return Err(Error::Config(format!("need 1 <= h <= k, got h={}, k={}", self.h, self.k)));
        }
        if self.nfe < 2 {
            return Err(Error::Config(format!("N must be at least 2, got {}", self.nfe)));
        }
        if self.mode == Mode::FutureOnly && self.order() > 1 {
            return Err(Error::Config("future-only mode needs a first-order solver".into()));
        }
        Ok(())
    }

    /// Grid steps consumed by a run with this budget.
    ///
    /// Full and past-only: one plain step, then `N - 1` iterations of `k + 1`
    /// steps, i.e. `(k + 1) N - k`. In units of point evaluations
    /// (`N_points = p N`) this is `M / p` with `M = (k + 1) N_points - k p`.
    ///
    /// Future-only spends two batches per iteration: `(k + 1) ⌊N/2⌋` steps plus
    /// one plain step when `N` is odd.
    pub fn grid_steps(&self) -> usize {
        match self.mode {
            Mode::Full | Mode::PastOnly => (self.k + 1) * self.nfe - self.k,
            Mode::FutureOnly => (self.k + 1) * (self.nfe / 2) + self.nfe % 2,
        }
    }

    pub fn grid(&self, kind: GridKind, t_count: usize) -> Result<TimeGrid> {
        self.validate()?;
        TimeGrid::new(kind, self.grid_steps(), t_count)
    }
}

/// Raises on a tag mismatch in debug builds; logs and carries on in release.
fn check_tag(q: &ScoreBuffer, t_start: usize, t_end: usize) -> Result<()> {
    match q.expect_interval(t_start, t_end) {
        Ok(()) => Ok(()),
        Err(e) if cfg!(debug_assertions) => Err(e),
        Err(e) => {
            log::warn!("{e}");
            Ok(())
        }
    }
}

/// Moves `x` from `t_i` to `t_target` with the scores of an earlier interval.
/// `expected_past` is the tag the buffer must carry.
#[allow(clippy::too_many_arguments)]
pub fn springboard_step(
    solver: &Solver,
    sched: &NoiseSchedule,
    q: &ScoreBuffer,
    x: &States,
    t_i: usize,
    t_target: usize,
    expected_past: (usize, usize),
    noise: &mut ChainNoise,
) -> Result<States> {
    check_tag(q, expected_past.0, expected_past.1)?;
    solver.apply(sched, q, x, t_i, t_target, noise)
}

/// A state batch and the time index it lives at.
#[derive(Debug, Clone, Copy)]
pub struct StateAt<'a> {
    pub x: &'a States,
    pub t: usize,
}

/// Jump to `t_target` with the scores computed at the springboard.
///
/// First-order solvers anchor the jump at `current`; higher-order solvers
/// continue from `springboard`.
pub fn future_update(
    solver: &Solver,
    sched: &NoiseSchedule,
    q_future: &ScoreBuffer,
    current: StateAt<'_>,
    springboard: StateAt<'_>,
    t_target: usize,
    noise: &mut ChainNoise,
) -> Result<States> {
    check_tag(q_future, springboard.t, t_target)?;
    let anchor = if solver.order() == 1 { current } else { springboard };
    solver.apply(sched, q_future, anchor.x, anchor.t, t_target, noise)
}

/// Everything one skip iteration touched, handed to an observer.
#[derive(Debug)]
pub struct Iteration<'a> {
    /// Grid position of the current state.
    pub i: usize,
    pub t_current: usize,
    pub t_springboard: usize,
    pub t_next: usize,
    pub current: &'a States,
    pub springboard: &'a States,
    /// Buffer used to reach the springboard.
    pub past: &'a ScoreBuffer,
    /// Buffer computed at the springboard.
    pub future: &'a ScoreBuffer,
    pub next: &'a States,
}

/// Runs `PFDiff-k_h` along `grid`, which must have exactly
/// [`PFDiffConfig::grid_steps`] steps.
pub fn pfdiff_sample(
    config: &PFDiffConfig,
    model: &ScoreModel,
    sched: &NoiseSchedule,
    grid: &TimeGrid,
    x_t: &States,
    noise: &mut ChainNoise,
) -> Result<SampleRun> {
    pfdiff_sample_observed(config, model, sched, grid, x_t, noise, &mut |_| Ok(()))
}

/// [`pfdiff_sample`] with a callback after every skip iteration.
pub fn pfdiff_sample_observed(
    config: &PFDiffConfig,
    model: &ScoreModel,
    sched: &NoiseSchedule,
    grid: &TimeGrid,
    x_t: &States,
    noise: &mut ChainNoise,
    observer: &mut dyn FnMut(&Iteration<'_>) -> Result<()>,
) -> Result<SampleRun> {
    config.validate()?;
    if grid.steps() != config.grid_steps() {
        return Err(Error::Config(format!(
            "grid has {} steps, but k={}, N={} in {} mode needs {}",
            grid.steps(),
            config.k,
            config.nfe,
            config.mode,
            config.grid_steps()
        )));
    }
    match config.mode {
        Mode::Full | Mode::PastOnly => run_skipping(config, model, sched, grid, x_t, noise, observer),
        Mode::FutureOnly => run_future_only(config, model, sched, grid, x_t, noise, observer),
    }
}

fn run_skipping(
    config: &PFDiffConfig,
    model: &ScoreModel,
    sched: &NoiseSchedule,
    grid: &TimeGrid,
    x_t: &States,
    noise: &mut ChainNoise,
    observer: &mut dyn FnMut(&Iteration<'_>) -> Result<()>,
) -> Result<SampleRun> {
    let solver = &config.solver;
    let (k, h, p) = (config.k, config.h, solver.order());
    let chains = x_t.nrows();
    let t = grid.points();
    let mut nfe = NfeCount::default();

    let mut visited = vec![t[0]];
    let mut states = vec![x_t.clone()];
    let mut springboards = Vec::new();

    let mut q = solver.fill_buffer(model, sched, x_t, t[0], t[1])?;
    nfe.add_batches(p, chains);
    let mut x = solver.apply(sched, &q, x_t, t[0], t[1], noise)?;
    visited.push(t[1]);
    states.push(x.clone());

    let mut i = 1;
    while i + k < grid.steps() {
        let expected_past = if i == 1 { (t[0], t[1]) } else { (t[i - (k - h + 1)], t[i]) };
        let sb = springboard_step(solver, sched, &q, &x, t[i], t[i + h], expected_past, noise)?;
        let past = std::mem::replace(&mut q, solver.fill_buffer(model, sched, &sb, t[i + h], t[i + k + 1])?);
        nfe.add_batches(p, chains);
        let current = StateAt { x: &x, t: t[i] };
        let board = StateAt { x: &sb, t: t[i + h] };
        let next = match config.mode {
            Mode::Full => future_update(solver, sched, &q, current, board, t[i + k + 1], noise)?,
            _ => {
                check_tag(&q, t[i + h], t[i + k + 1])?;
                solver.apply(sched, &q, &sb, t[i + h], t[i + k + 1], noise)?
            }
        };
        observer(&Iteration {
            i,
            t_current: t[i],
            t_springboard: t[i + h],
            t_next: t[i + k + 1],
            current: &x,
            springboard: &sb,
            past: &past,
            future: &q,
            next: &next,
        })?;
        springboards.push((t[i + h], sb));
        x = next;
        i += k + 1;
        visited.push(t[i]);
        states.push(x.clone());
    }
    debug_assert_eq!(i, grid.steps());
    finish(grid, visited, states, springboards, nfe)
}

fn run_future_only(
    config: &PFDiffConfig,
    model: &ScoreModel,
    sched: &NoiseSchedule,
    grid: &TimeGrid,
    x_t: &States,
    noise: &mut ChainNoise,
    observer: &mut dyn FnMut(&Iteration<'_>) -> Result<()>,
) -> Result<SampleRun> {
    let solver = &config.solver;
    let (k, h) = (config.k, config.h);
    let chains = x_t.nrows();
    let t = grid.points();
    let mut nfe = NfeCount::default();
    let mut visited = vec![t[0]];
    let mut states = vec![x_t.clone()];
    let mut springboards = Vec::new();
    let mut x = x_t.clone();
    let mut i = 0;
    for _ in 0..config.nfe / 2 {
        let here = solver.fill_buffer(model, sched, &x, t[i], t[i + h])?;
        let ahead = solver.apply(sched, &here, &x, t[i], t[i + h], noise)?;
        let future = solver.fill_buffer(model, sched, &ahead, t[i + h], t[i + k + 1])?;
        nfe.add_batches(2, chains);
        let next = future_update(
            solver,
            sched,
            &future,
            StateAt { x: &x, t: t[i] },
            StateAt { x: &ahead, t: t[i + h] },
            t[i + k + 1],
            noise,
        )?;
        observer(&Iteration {
            i,
            t_current: t[i],
            t_springboard: t[i + h],
            t_next: t[i + k + 1],
            current: &x,
            springboard: &ahead,
            past: &here,
            future: &future,
            next: &next,
        })?;
        springboards.push((t[i + h], ahead));
        x = next;
        i += k + 1;
        visited.push(t[i]);
        states.push(x.clone());
    }
    if config.nfe % 2 == 1 {
        let (next, _) = solver.step(model, sched, &x, t[i], t[i + 1], noise)?;
        nfe.add_batches(1, chains);
        x = next;
        i += 1;
        visited.push(t[i]);
        states.push(x.clone());
    }
    debug_assert_eq!(i, grid.steps());
    finish(grid, visited, states, springboards, nfe)
}

fn finish(
    grid: &TimeGrid,
    visited: Vec<usize>,
    states: Vec<States>,
    springboards: Vec<(usize, States)>,
    nfe: NfeCount,
) -> Result<SampleRun> {
    let visited = TimeGrid::from_points(grid.kind, grid.t_count, visited)?;
    Ok(SampleRun { trajectory: TrajectoryRecord::new(visited, states, None)?, springboards, nfe })
}

/// A sampling method with its evaluation budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Sampler {
    /// The plain solver on an `N`-step grid.
    Baseline {
        #[serde(default)]
        solver: Solver,
        #[serde(rename = "N")]
        nfe: usize,
    },
    #[serde(rename = "pfdiff")]
    PFDiff(PFDiffConfig),
}

impl Sampler {
    pub fn grid_steps(&self) -> usize {
        match self {
            Self::Baseline { nfe, .. } => *nfe,
            Self::PFDiff(c) => c.grid_steps(),
        }
    }

    pub fn solver(&self) -> Solver {
        match self {
            Self::Baseline { solver, .. } => *solver,
            Self::PFDiff(c) => c.solver,
        }
    }

    pub fn grid(&self, kind: GridKind, t_count: usize) -> Result<TimeGrid> {
        match self {
            Self::Baseline { solver, nfe } => {
                solver.validate()?;
                TimeGrid::new(kind, *nfe, t_count)
            }
            Self::PFDiff(c) => c.grid(kind, t_count),
        }
    }

    pub fn run(
        &self,
        model: &ScoreModel,
        sched: &NoiseSchedule,
        grid: &TimeGrid,
        x_t: &States,
        noise: &mut ChainNoise,
    ) -> Result<SampleRun> {
        match self {
            Self::Baseline { solver, .. } => baseline_sample(solver, model, sched, grid, x_t, noise),
            Self::PFDiff(c) => pfdiff_sample(c, model, sched, grid, x_t, noise),
        }
    }
}

/// Mean endpoint MSE of one `(k, h)` candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub k: usize,
    pub h: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub scores: Vec<CandidateScore>,
    pub best: (usize, usize),
    /// Candidates whose error tied the winner's.
    pub tied: Vec<(usize, usize)>,
}

/// Settings for [`auto_search_kh`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSettings {
    pub nfe: usize,
    pub solver: Solver,
    pub grid_kind: GridKind,
    pub warmup: usize,
    pub seed: u64,
    pub reference_steps: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            nfe: 6,
            solver: Solver::default(),
            grid_kind: GridKind::Uniform,
            warmup: 256,
            seed: 0,
            reference_steps: crate::solvers::DEFAULT_REFERENCE_STEPS,
        }
    }
}

/// Two errors are a tie when they agree to this relative tolerance (or are
/// both below `TIE_ABS`).
pub const TIE_REL: f64 = 1e-9;
pub const TIE_ABS: f64 = 1e-20;

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_ABS.max(TIE_REL * a.abs().max(b.abs()))
}

/// All six `(k, h)` pairs with `h <= k <= 3`.
pub fn all_candidates() -> Vec<(usize, usize)> {
    (1..=3).flat_map(|k| (1..=k).map(move |h| (k, h))).collect()
}

/// Picks the `(k, h)` with the smallest mean endpoint MSE against the
/// reference trajectory over `warmup` seeded chains. Ties go to the smaller
/// `k`, then the smaller `h`.
pub fn auto_search_kh(
    candidates: &[(usize, usize)],
    model: &ScoreModel,
    sched: &NoiseSchedule,
    settings: &SearchSettings,
) -> Result<SearchReport> {
    if candidates.is_empty() {
        return Err(Error::Config("no (k, h) candidates".into()));
    }
    if settings.warmup < 16 {
        return Err(Error::Config(format!("warmup must be at least 16, got {}", settings.warmup)));
    }
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    let x_t = ChainNoise::new(settings.seed, settings.warmup).standard_normal(model.dim());
    let reference =
        crate::solvers::reference_solve_at(model, sched, &x_t, settings.reference_steps, Some(&[0]), false)?;
    let mut scores = Vec::with_capacity(cands.len());
    for &(k, h) in &cands {
        let config = PFDiffConfig { k, h, nfe: settings.nfe, mode: Mode::Full, solver: settings.solver };
        let grid = config.grid(settings.grid_kind, sched.t_count())?;
        let mut noise = ChainNoise::new(settings.seed, settings.warmup);
        // keep the η > 0 noise streams past the initial-state draws
        noise.standard_normal(model.dim());
        let run = pfdiff_sample(&config, model, sched, &grid, &x_t, &mut noise)?;
        let (mse, _) = crate::metrics::endpoint_mse(run.endpoint(), reference.endpoint())?;
        scores.push(CandidateScore { k, h, mse });
    }
    let mut best = scores[0];
    for s in &scores[1..] {
        if s.mse < best.mse && !ties(s.mse, best.mse) {
            best = *s;
        }
    }
    let tied = scores
        .iter()
        .filter(|s| ties(s.mse, best.mse) && (s.k, s.h) != (best.k, best.h))
        .map(|s| (s.k, s.h))
        .collect();
    Ok(SearchReport { scores, best: (best.k, best.h), tied })
}
