//! Experiment configuration files (TOML).
//!
//! ```toml
//! preset = "bimodal-2d"        # preset name, or a path to a mixture JSON file
//! seed = 0
//! chains = 256
//! grid = "uniform"             # or "quadratic"
//! reference_steps = 1000
//!
//! [schedule]
//! T = 1000
//! beta_min = 1e-4
//! beta_max = 0.02
//!
//! [sampler]
//! method = "pfdiff"            # or "baseline" (fields: N, solver)
//! k = 2
//! h = 1
//! N = 10
//! mode = "full"                # "past-only", "future-only"
//! solver = { kind = "ddim", eta = 0.0 }   # or { kind = "dpm-solver", order = 2 }
//!
//! [diagnose]
//! dt = [0, 1, 10, 100, 500, 900]
//! N = [6, 8]
//! eta = [0.0, 0.5, 1.0]
//! trajectory = "run/trajectory.csv"   # optional, truncation only
//! reference = "ref/trajectory.csv"
//!
//! [search]
//! N = 6
//! warmup = 256
//! candidates = [[1, 1], [2, 1]]
//!
//! [metrics]
//! n_proj = 128
//! truth_samples = 10000
//! truth_seed = 1
//!
//! [output]
//! trajectories = false
//! ```

use std::path::{Path, PathBuf};

use pfdiff_core::score::presets;
use pfdiff_core::{EpsSource, GaussianMixture, GridKind, NoiseSchedule, RunSetup, Sampler};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default)]
    pub grid: GridKind,
    #[serde(default = "default_reference_steps")]
    pub reference_steps: usize,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<Sampler>,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_chains() -> usize {
    256
}

fn default_reference_steps() -> usize {
    pfdiff_core::solvers::DEFAULT_REFERENCE_STEPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(rename = "T")]
    pub t_count: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { t_count: 1000, beta_min: 1e-4, beta_max: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    #[serde(default = "default_dt")]
    pub dt: Vec<usize>,
    #[serde(rename = "N", default, skip_serializing_if = "Vec::is_empty")]
    pub nfe: Vec<usize>,
    #[serde(default = "default_eta")]
    pub eta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
}

fn default_dt() -> Vec<usize> {
    vec![0, 1, 10, 100, 500, 900]
}

fn default_eta() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self { dt: default_dt(), nfe: Vec::new(), eta: default_eta(), trajectory: None, reference: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub nfe: Option<usize>,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<(usize, usize)>>,
}

fn default_warmup() -> usize {
    256
}

impl Default for SearchSection {
    fn default() -> Self {
        Self { nfe: None, warmup: default_warmup(), candidates: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub n_proj: usize,
    pub truth_samples: usize,
    pub truth_seed: u64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { n_proj: 128, truth_samples: 10_000, truth_seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub trajectories: bool,
}

/// A parsed config plus everything resolved from it.
#[derive(Debug)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub schedule: NoiseSchedule,
    pub source: EpsSource,
    /// `(label, sha256)` of every input file read.
    pub inputs: Vec<(String, String)>,
}

impl Loaded {
    pub fn setup(&self) -> RunSetup {
        RunSetup {
            chains: self.config.chains,
            seed: self.config.seed,
            grid: self.config.grid,
            reference_steps: self.config.reference_steps,
        }
    }

    pub fn sampler(&self) -> Result<Sampler, CliError> {
        self.config.sampler.ok_or_else(|| CliError::Config("missing field `sampler`".into()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses and validates a config document. `base` resolves relative paths.
pub fn parse(text: &str, base: &Path) -> Result<Loaded, CliError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let s = config.schedule;
    let schedule = NoiseSchedule::vp_linear(s.t_count, s.beta_min, s.beta_max)
        .map_err(|e| CliError::Config(format!("field `schedule`: {e}")))?;
    let mut inputs = Vec::new();
    let source = if config.preset.ends_with(".json") {
        let path = base.join(&config.preset);
        let bytes = std::fs::read(&path)
            .map_err(|e| CliError::Config(format!("field `preset`: cannot read {}: {e}", path.display())))?;
        inputs.push((config.preset.clone(), sha256_hex(&bytes)));
        let text = String::from_utf8_lossy(&bytes);
        EpsSource::Mixture(
            GaussianMixture::from_json(&text).map_err(|e| CliError::Config(format!("field `preset`: {e}")))?,
        )
    } else {
        presets::source(&config.preset).map_err(|_| {
            CliError::Config(format!(
                "field `preset`: unknown preset `{}` (expected one of {} or a .json mixture file)",
                config.preset,
                presets::NAMES.join(", ")
            ))
        })?
    };
    if config.chains == 0 {
        return Err(CliError::Config("field `chains`: must be at least 1".into()));
    }
    if let Some(sampler) = &config.sampler {
        sampler.grid(config.grid, schedule.t_count()).map_err(|e| CliError::Config(format!("field `sampler`: {e}")))?;
    }
    pfdiff_core::solvers::ReferencePlan::new(&schedule, config.reference_steps)
        .map_err(|e| CliError::Config(format!("field `reference_steps`: {e}")))?;
    Ok(Loaded { config, schedule, source, inputs })
}

pub fn load(path: &Path, seed: Option<u64>, chains: Option<usize>) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::Config("config is not UTF-8".into()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut loaded = parse(&text, base).map_err(|e| e.context(&path.display().to_string()))?;
    loaded.inputs.insert(0, (path.display().to_string(), sha256_hex(&bytes)));
    let config = &mut loaded.config;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(chains) = chains {
        if chains == 0 {
            return Err(CliError::Config("--chains must be at least 1".into()));
        }
        config.chains = chains;
    }
    Ok(loaded)
}
