use std::path::Path;
use std::time::Instant;

use pfdiff_core::diagnostics::{self, prop1_check, prop1_random};
use pfdiff_core::pfdiff::{all_candidates, auto_search_kh, SearchSettings};
use pfdiff_core::{Cell, PFDiffConfig, Sampler, ScoreModel, Solver, Table};

use crate::config::{self, sha256_hex, Loaded};
use crate::error::CliError;
use crate::output::{self, RunManifest, Writer};
use crate::DiagnoseKind;

fn model(loaded: &Loaded) -> ScoreModel {
    ScoreModel::new(loaded.source.clone(), loaded.schedule.clone())
}

fn manifest(command: &str, loaded: &Loaded) -> Result<RunManifest, CliError> {
    Ok(RunManifest::new(command, serde_json::to_value(&loaded.config)?, loaded.config.seed, &loaded.inputs))
}

fn finish(mut manifest: RunManifest, writer: &Writer, name: &str, started: Instant) -> Result<(), CliError> {
    manifest.outputs = writer.files().to_vec();
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    let path = writer.dir().join(name);
    std::fs::write(&path, manifest.to_json()?)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn pfdiff_config(loaded: &Loaded, what: &str) -> Result<PFDiffConfig, CliError> {
    match loaded.sampler()? {
        Sampler::PFDiff(c) => Ok(c),
        Sampler::Baseline { .. } => Err(CliError::Config(format!("field `sampler`: {what} needs method = \"pfdiff\""))),
    }
}

pub fn sample(path: &Path, seed: Option<u64>, chains: Option<usize>, out: &Path, trajectories: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let loaded = config::load(path, seed, chains)?;
    let sampler = loaded.sampler()?;
    let model = model(&loaded);
    let setup = loaded.setup();
    let (x_t, mut noise) = setup.start(model.dim())?;
    let grid = sampler.grid(setup.grid, loaded.schedule.t_count())?;
    let run = sampler.run(&model, &loaded.schedule, &grid, &x_t, &mut noise)?;

    let mut writer = Writer::new(out)?;
    writer.write("endpoints.csv", &output::states_table(run.endpoint()).to_csv())?;
    if trajectories || loaded.config.output.trajectories {
        writer.write("trajectory.csv", &output::trajectory_table(&run.trajectory).to_csv())?;
    }
    println!(
        "nfe_batches={} nfe_points={} grid_steps={} chains={}",
        run.nfe.batches,
        run.nfe.points,
        grid.steps(),
        setup.chains
    );
    finish(manifest("sample", &loaded)?.with_nfe(run.nfe), &writer, "manifest.json", started)
}

pub fn diagnose(
    kind: DiagnoseKind,
    path: &Path,
    seed: Option<u64>,
    chains: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let started = Instant::now();
    let mut loaded = config::load(path, seed, chains)?;
    let model = model(&loaded);
    let sched = loaded.schedule.clone();
    let setup = loaded.setup();
    let section = loaded.config.diagnose.clone();
    let table = match kind {
        DiagnoseKind::MseDt => diagnostics::mse_vs_dt(&model, &sched, &setup, &section.dt)?,
        DiagnoseKind::Springboard => {
            let cfg = pfdiff_config(&loaded, "springboard")?;
            diagnostics::springboard_vs_future(&model, &sched, &cfg, &setup)?
        }
        DiagnoseKind::Truncation => match (&section.trajectory, &section.reference) {
            (Some(traj), Some(reference)) => {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                let mut read = |p: &Path| -> Result<_, CliError> {
                    let full = base.join(p);
                    let bytes = std::fs::read(&full)?;
                    loaded.inputs.push((p.display().to_string(), sha256_hex(&bytes)));
                    output::read_trajectory(&full, sched.t_count())
                };
                let traj = read(traj)?;
                let reference = read(reference)?;
                diagnostics::accumulated_truncation(&traj, &reference)?
            }
            (None, None) => diagnostics::sampler_truncation(&model, &sched, &loaded.sampler()?, &setup)?,
            _ => {
                return Err(CliError::Config(
                    "field `diagnose`: set both `trajectory` and `reference`, or neither".into(),
                ))
            }
        },
        DiagnoseKind::Planarity => {
            let sampler = loaded.sampler()?;
            let (x_t, mut noise) = setup.start(model.dim())?;
            let grid = sampler.grid(setup.grid, sched.t_count())?;
            let run = sampler.run(&model, &sched, &grid, &x_t, &mut noise)?;
            diagnostics::planarity_table(&run.trajectory)?
        }
        DiagnoseKind::EtaSweep => {
            let cfg = pfdiff_config(&loaded, "eta-sweep")?;
            let n_list = if section.nfe.is_empty() { vec![cfg.nfe] } else { section.nfe.clone() };
            diagnostics::eta_sweep(&model, &sched, &cfg, &n_list, &section.eta, &setup)?
        }
    };
    let name = kind.name();
    let mut writer = Writer::new(out)?;
    writer.write(&format!("{name}.csv"), &table.to_csv())?;
    print!("{}", table.to_csv());
    let mut m = manifest(&format!("diagnose {name}"), &loaded)?;
    m.schema = Some(table.schema.clone());
    finish(m, &writer, &format!("{name}.json"), started)
}

fn parse_candidates(text: &str) -> Result<Vec<(usize, usize)>, CliError> {
    let bad = || CliError::Config(format!("--candidates: expected pairs like `1,1;2,1`, got `{text}`"));
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (k, h) = pair.split_once(',').ok_or_else(bad)?;
            Ok((k.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

pub fn search(
    path: &Path,
    seed: Option<u64>,
    chains: Option<usize>,
    out: &Path,
    candidates: Option<&str>,
    warmup: Option<usize>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let loaded = config::load(path, seed, chains)?;
    let section = &loaded.config.search;
    let candidates = match candidates {
        Some(text) => parse_candidates(text)?,
        None => section.candidates.clone().unwrap_or_else(all_candidates),
    };
    if candidates.is_empty() {
        return Err(CliError::Config("no (k, h) candidates given".into()));
    }
    let (sampler_nfe, solver) = match loaded.config.sampler {
        Some(Sampler::PFDiff(c)) => (Some(c.nfe), c.solver),
        Some(Sampler::Baseline { solver, nfe }) => (Some(nfe), solver),
        None => (None, Solver::default()),
    };
    let settings = SearchSettings {
        nfe: section.nfe.or(sampler_nfe).unwrap_or(6),
        solver,
        grid_kind: loaded.config.grid,
        warmup: warmup.unwrap_or(section.warmup),
        seed: loaded.config.seed,
        reference_steps: loaded.config.reference_steps,
    };
    let report = auto_search_kh(&candidates, &model(&loaded), &loaded.schedule, &settings)?;

    let mut table = Table::new("search/1", &["k", "h", "mse", "chosen"]);
    for s in &report.scores {
        table.push(vec![s.k.into(), s.h.into(), s.mse.into(), Cell::from((s.k, s.h) == report.best)]);
    }
    let mut writer = Writer::new(out)?;
    writer.write("search.csv", &table.to_csv())?;
    print!("{}", table.to_csv());
    println!("chosen k={} h={} (N={}, warmup={})", report.best.0, report.best.1, settings.nfe, settings.warmup);
    if !report.tied.is_empty() {
        let others: Vec<String> = report.tied.iter().map(|(k, h)| format!("({k},{h})")).collect();
        println!("tie with {} broken toward smaller k, then smaller h", others.join(", "));
    }
    finish(manifest("search", &loaded)?, &writer, "manifest.json", started)
}

pub fn prop1(samples: usize, nmax: u32, seed: u64, tuple: Option<&str>) -> Result<(), CliError> {
    if let Some(text) = tuple {
        let vals: Vec<f64> = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Config(format!("--tuple: expected `t_prev,t_cur,eps`, got `{text}`")))?;
        let [t_prev, t_cur, eps] = vals[..] else {
            return Err(CliError::Config(format!("--tuple: expected three numbers, got `{text}`")));
        };
        let rows = prop1_check(t_prev, t_cur, eps, nmax).map_err(|e| CliError::Config(format!("rejected: {e}")))?;
        println!("n,lhs,rhs,holds");
        for r in &rows {
            println!("{},{:?},{:?},{}", r.n, r.lhs, r.rhs, r.holds);
        }
        return match rows.iter().find(|r| !r.holds) {
            Some(r) => Err(CliError::Assertion(format!("inequality fails at n = {}", r.n))),
            None => {
                println!("pass");
                Ok(())
            }
        };
    }
    let summary = prop1_random(samples, nmax, seed)?;
    println!(
        "samples={} checks={} counterexamples={} seed={seed} nmax={nmax}",
        summary.samples,
        summary.checks,
        summary.counterexamples.len()
    );
    if summary.passed() {
        println!("pass");
        Ok(())
    } else {
        let (a, b, e, n) = summary.counterexamples[0];
        Err(CliError::Assertion(format!("counterexample t_prev={a} t_cur={b} eps={e} n={n}")))
    }
}

pub fn metrics(path: &Path, seed: Option<u64>, chains: Option<usize>, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let loaded = config::load(path, seed, chains)?;
    let sampler = loaded.sampler()?;
    let m = loaded.config.metrics;
    let records = diagnostics::sample_quality(
        &model(&loaded),
        &loaded.schedule,
        &sampler,
        &loaded.setup(),
        m.n_proj,
        m.truth_samples,
        m.truth_seed,
    )?;
    let mut writer = Writer::new(out)?;
    writer.write("metrics.json", &(serde_json::to_string_pretty(&records)? + "\n"))?;
    for r in &records {
        println!("{}={:?}", r.metric, r.value);
    }
    finish(manifest("metrics", &loaded)?, &writer, "manifest.json", started)
}
