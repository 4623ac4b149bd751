//! Error-analysis measurements on the analytic testbeds.
//!
//! Each measurement returns a [`Table`] ready to be written as CSV. The
//! testbeds reproduce the qualitative shape of the score-similarity and
//! truncation curves only; they are not meant to match image-model numbers.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{endpoint_mse, gaussian_w2, mean_std, sliced_wasserstein, squared_distances, MetricRecord, SampleSet};
use crate::pfdiff::{pfdiff_sample_observed, PFDiffConfig, Sampler};
use crate::rng::ChainNoise;
use crate::schedule::{GridKind, NoiseSchedule};
use crate::score::{EpsSource, ScoreModel};
use crate::solvers::{reference_solve_at, States, DEFAULT_REFERENCE_STEPS};
use crate::table::{Cell, Table};
use crate::trajectory::TrajectoryRecord;

/// Chain count, seed, grid spacing and reference resolution shared by the
/// diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSetup {
    pub chains: usize,
    pub seed: u64,
    pub grid: GridKind,
    pub reference_steps: usize,
}

impl Default for RunSetup {
    fn default() -> Self {
        Self { chains: 256, seed: 0, grid: GridKind::Uniform, reference_steps: DEFAULT_REFERENCE_STEPS }
    }
}

impl RunSetup {
    /// Initial states `x_T ~ N(0, I)` and the per-chain streams positioned
    /// right after those draws.
    pub fn start(&self, dim: usize) -> Result<(States, ChainNoise)> {
        if self.chains == 0 {
            return Err(Error::Config("chains must be at least 1".into()));
        }
        let mut noise = ChainNoise::new(self.seed, self.chains);
        let x_t = noise.standard_normal(dim);
        Ok((x_t, noise))
    }
}

/// Mean of `‖ε(x_t, t) − ε(x_{t+Δt}, t+Δt)‖²` over all chains and every `t`
/// with `t + Δt` on the schedule, from a trajectory with scores recorded at
/// every index.
pub fn mse_vs_dt_from(record: &TrajectoryRecord, dt_list: &[usize]) -> Result<Table> {
    let scores = record.scores().ok_or_else(|| Error::Alignment("trajectory has no recorded scores".into()))?;
    let pts = record.grid().points();
    let top = pts[0];
    if pts.len() != top + 1 {
        return Err(Error::Alignment("score similarity needs every time index recorded".into()));
    }
    // points run from `top` down to 0, so index t sits at position top - t
    let at = |t: usize| &scores[top - t];
    let mut table = Table::new("mse-dt/1", &["dt", "mse"]);
    for &dt in dt_list {
        if dt > top {
            return Err(Error::InvalidRange(format!("dt = {dt} exceeds the largest index {top}")));
        }
        let mut total = 0.0;
        for t in 0..=top - dt {
            total += squared_distances(at(t), at(t + dt))?.iter().sum::<f64>();
        }
        let count = (top - dt + 1) * record.chains();
        table.push(vec![dt.into(), (total / count as f64).into()]);
    }
    Ok(table)
}

/// Score similarity along reference trajectories of `setup.chains` seeded
/// chains.
pub fn mse_vs_dt(model: &ScoreModel, sched: &NoiseSchedule, setup: &RunSetup, dt_list: &[usize]) -> Result<Table> {
    let (x_t, _) = setup.start(model.dim())?;
    let record = reference_solve_at(model, sched, &x_t, setup.reference_steps.max(sched.t_count() - 1), None, true)?;
    mse_vs_dt_from(&record, dt_list)
}

/// Per skip iteration of a PFDiff run, the error at `t_{i+k+1}` against the
/// reference when the state is advanced from the springboard with the past
/// scores, and when it takes the future-score update.
pub fn springboard_vs_future(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    config: &PFDiffConfig,
    setup: &RunSetup,
) -> Result<Table> {
    let (x_t, mut noise) = setup.start(model.dim())?;
    let grid = config.grid(setup.grid, sched.t_count())?;
    let reference = reference_solve_at(model, sched, &x_t, setup.reference_steps, Some(grid.points()), false)?;
    // a separate stream so the side computation leaves the run untouched
    let mut side = ChainNoise::with_offset(setup.seed, setup.chains, setup.chains);
    let mut rows = Vec::new();
    pfdiff_sample_observed(config, model, sched, &grid, &x_t, &mut noise, &mut |it| {
        let truth = reference
            .state_at(it.t_next)
            .ok_or_else(|| Error::Alignment(format!("reference misses t = {}", it.t_next)))?;
        let via_board = config.solver.apply(sched, it.past, it.springboard, it.t_springboard, it.t_next, &mut side)?;
        let (sb, _) = endpoint_mse(&via_board, truth)?;
        let (fut, _) = endpoint_mse(it.next, truth)?;
        rows.push((it.i, it.t_next, sb, fut));
        Ok(())
    })?;
    let mut table = Table::new("springboard/1", &["iteration", "t", "mse_springboard", "mse_future"]);
    for (i, t, sb, fut) in rows {
        table.push(vec![i.into(), t.into(), sb.into(), fut.into()]);
    }
    Ok(table)
}

/// Squared-error statistics of `traj` against `reference` at every time index
/// both record, plus the running sum of the mean along the trajectory.
/// Alignment is by exact index match.
pub fn accumulated_truncation(traj: &TrajectoryRecord, reference: &TrajectoryRecord) -> Result<Table> {
    let mut table = Table::new("truncation/1", &["t", "mean", "std", "accumulated"]);
    let mut accumulated = 0.0;
    for (&t, x) in traj.grid().points().iter().zip(traj.states()) {
        if let Some(r) = reference.state_at(t) {
            let (mean, std) = mean_std(&squared_distances(x, r)?);
            accumulated += mean;
            table.push(vec![t.into(), mean.into(), std.into(), accumulated.into()]);
        }
    }
    if table.rows.is_empty() {
        return Err(Error::Alignment("trajectory and reference share no time points".into()));
    }
    Ok(table)
}

/// Runs `sampler` and its reference from the same seeded chains and reports
/// the truncation error along the visited points.
pub fn sampler_truncation(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    sampler: &Sampler,
    setup: &RunSetup,
) -> Result<Table> {
    let (x_t, mut noise) = setup.start(model.dim())?;
    let grid = sampler.grid(setup.grid, sched.t_count())?;
    let run = sampler.run(model, sched, &grid, &x_t, &mut noise)?;
    let reference =
        reference_solve_at(model, sched, &x_t, setup.reference_steps, Some(run.trajectory.grid().points()), false)?;
    accumulated_truncation(&run.trajectory, &reference)
}

/// One row of [`prop1_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prop1Row {
    pub n: u32,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Compares `|((t_cur−ε)ⁿ − (t_prev−ε)ⁿ)/n!|` with `|(t_cur−t_prev)ⁿ/n!|` for
/// `n = 2..=n_max`.
pub fn prop1_check(t_prev: f64, t_cur: f64, eps: f64, n_max: u32) -> Result<Vec<Prop1Row>> {
    if !(t_prev < eps && eps < t_cur) {
        return Err(Error::Domain(format!("need {t_prev} < {eps} < {t_cur}")));
    }
    if n_max < 2 {
        return Err(Error::InvalidRange(format!("n_max must be at least 2, got {n_max}")));
    }
    let mut fact = 1.0;
    let mut rows = Vec::with_capacity(n_max as usize - 1);
    for n in 1..=n_max {
        fact *= n as f64;
        if n < 2 {
            continue;
        }
        let p = n as i32;
        let lhs = (((t_cur - eps).powi(p) - (t_prev - eps).powi(p)) / fact).abs();
        let rhs = ((t_cur - t_prev).powi(p) / fact).abs();
        rows.push(Prop1Row { n, lhs, rhs, holds: lhs < rhs });
    }
    Ok(rows)
}

/// Outcome of a randomized [`prop1_check`] sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Summary {
    pub samples: usize,
    pub checks: usize,
    pub counterexamples: Vec<(f64, f64, f64, u32)>,
}

impl Prop1Summary {
    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Draws `samples` tuples with `0 ≤ t_prev < ε < t_cur ≤ 1000` and a random
/// `n_max` in `2..=n_max`, checking every order up to it.
pub fn prop1_random(samples: usize, n_max: u32, seed: u64) -> Result<Prop1Summary> {
    if samples == 0 {
        return Err(Error::InvalidRange("samples must be at least 1".into()));
    }
    if n_max < 2 {
        return Err(Error::InvalidRange(format!("n_max must be at least 2, got {n_max}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = Prop1Summary { samples, checks: 0, counterexamples: Vec::new() };
    let mut drawn = 0;
    while drawn < samples {
        let a: f64 = rng.random_range(0.0..1000.0);
        let b: f64 = rng.random_range(0.0..1000.0);
        let (t_prev, t_cur) = if a < b { (a, b) } else { (b, a) };
        let eps = rng.random_range(t_prev..=t_cur);
        let n = rng.random_range(2..=n_max);
        // draws on or outside the open interval are redrawn, not counted
        let Ok(rows) = prop1_check(t_prev, t_cur, eps, n) else { continue };
        drawn += 1;
        summary.checks += rows.len();
        for r in rows.iter().filter(|r| !r.holds) {
            summary.counterexamples.push((t_prev, t_cur, eps, r.n));
        }
    }
    Ok(summary)
}

/// Fraction of the variance of one chain's centered states explained by the
/// top two principal components. `states` holds one row per time point.
pub fn trajectory_planarity(states: ArrayView2<'_, f64>) -> Result<f64> {
    let (m, d) = states.dim();
    if d < 2 || m < 4 {
        return Err(Error::InvalidRange(format!("planarity needs D >= 2 and at least 3 steps, got D = {d}, {m} states")));
    }
    if d == 2 {
        return Ok(1.0);
    }
    let mean: Vec<f64> = (0..d).map(|j| states.column(j).sum() / m as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in states.rows() {
        for r in 0..d {
            let a = row[r] - mean[r];
            for s in 0..d {
                cov[(r, s)] += a * (row[s] - mean[s]);
            }
        }
    }
    let total = cov.trace();
    let scale = states.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
    if total <= 1e-24 * scale * scale * m as f64 {
        return Ok(1.0);
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|l| l.max(0.0)).collect();
    eig.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(((eig[0] + eig[1]) / eig.iter().sum::<f64>()).min(1.0))
}

/// Planarity of every chain of a trajectory.
pub fn planarity_table(traj: &TrajectoryRecord) -> Result<Table> {
    let mut table = Table::new("planarity/1", &["chain", "fraction"]);
    for c in 0..traj.chains() {
        table.push(vec![c.into(), trajectory_planarity(traj.chain(c).view())?.into()]);
    }
    Ok(table)
}

/// Endpoint MSE against the deterministic reference for PFDiff and its
/// baseline at every `(N, η)` pair. The baseline runs the same first-order
/// solver on an `N`-step grid.
pub fn eta_sweep(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    base: &PFDiffConfig,
    n_list: &[usize],
    eta_list: &[f64],
    setup: &RunSetup,
) -> Result<Table> {
    if let Some(bad) = eta_list.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(Error::InvalidRange(format!("eta = {bad} is outside [0, 1]")));
    }
    let (x_t, _) = setup.start(model.dim())?;
    let reference = reference_solve_at(model, sched, &x_t, setup.reference_steps, Some(&[0]), false)?;
    let mut table = Table::new("eta-sweep/1", &["N", "eta", "method", "mse_mean", "mse_std"]);
    for &n in n_list {
        for &eta in eta_list {
            let solver = crate::solvers::Solver::Ddim { eta };
            let config = PFDiffConfig { nfe: n, solver, ..*base };
            for (name, sampler) in [("baseline", Sampler::Baseline { solver, nfe: n }), ("pfdiff", Sampler::PFDiff(config))] {
                let (mean, std) = endpoint_error(model, sched, &sampler, setup, &reference)?;
                table.push(vec![n.into(), eta.into(), name.into(), mean.into(), std.into()]);
            }
        }
    }
    Ok(table)
}

fn endpoint_error(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    sampler: &Sampler,
    setup: &RunSetup,
    reference: &TrajectoryRecord,
) -> Result<(f64, f64)> {
    let (x_t, mut noise) = setup.start(model.dim())?;
    let grid = sampler.grid(setup.grid, sched.t_count())?;
    let run = sampler.run(model, sched, &grid, &x_t, &mut noise)?;
    endpoint_mse(run.endpoint(), reference.endpoint())
}

/// Mean and std of the endpoint MSE of each sampler against the reference,
/// all started from the same seeded chains.
pub fn endpoint_error_table(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    samplers: &[(String, Sampler)],
    setup: &RunSetup,
) -> Result<Table> {
    let (x_t, _) = setup.start(model.dim())?;
    let reference = reference_solve_at(model, sched, &x_t, setup.reference_steps, Some(&[0]), false)?;
    let mut table = Table::new("endpoint-error/1", &["label", "grid_steps", "mse_mean", "mse_std"]);
    for (label, sampler) in samplers {
        let (mean, std) = endpoint_error(model, sched, sampler, setup, &reference)?;
        table.push(vec![Cell::from(label.as_str()), sampler.grid_steps().into(), mean.into(), std.into()]);
    }
    Ok(table)
}

/// Sample-quality summary of one sampler: endpoint MSE against the reference
/// and, for mixture data, sliced and moment-matched Gaussian W2 distances to
/// `truth_samples` exact draws from `q_0` seeded with `truth_seed`.
pub fn sample_quality(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    sampler: &Sampler,
    setup: &RunSetup,
    n_proj: usize,
    truth_samples: usize,
    truth_seed: u64,
) -> Result<Vec<MetricRecord>> {
    let (x_t, mut noise) = setup.start(model.dim())?;
    let grid = sampler.grid(setup.grid, sched.t_count())?;
    let run = sampler.run(model, sched, &grid, &x_t, &mut noise)?;
    let reference = reference_solve_at(model, sched, &x_t, setup.reference_steps, Some(&[0]), false)?;
    let (mse, mse_std) = endpoint_mse(run.endpoint(), reference.endpoint())?;
    let n = setup.chains;
    let record = |metric: &str, value: f64, n_proj: Option<usize>, seed: Option<u64>| MetricRecord {
        metric: metric.into(),
        value,
        n,
        n_proj,
        seed,
    };
    let mut out = vec![record("endpoint_mse", mse, None, Some(setup.seed)), record("endpoint_mse_std", mse_std, None, Some(setup.seed))];
    if let EpsSource::Mixture(mixture) = model.source() {
        let samples = SampleSet::new(run.endpoint().clone())?;
        let truth = SampleSet::new(mixture.sample(truth_samples, &mut ChaCha8Rng::seed_from_u64(truth_seed)))?;
        let sw = sliced_wasserstein(&samples, &truth, n_proj, truth_seed)?;
        out.push(record("sliced_w2", sw, Some(n_proj), Some(truth_seed)));
        let w2 = gaussian_w2(&samples.mean(), &samples.covariance(), &mixture.mean(), &mixture.covariance())?;
        out.push(record("gaussian_w2", w2, None, None));
    }
    Ok(out)
}
