//! `pfdiff`: seeded sampling, diagnostics and metrics runs on analytic
//! diffusion testbeds, with CSV outputs and replayable manifests.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pfdiff", version, about = "Timestep-skipping diffusion samplers on analytic testbeds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's chain count.
    #[arg(long)]
    chains: Option<usize>,
    /// Output directory.
    #[arg(long, env = "PFDIFF_OUT_DIR", default_value = "pfdiff-out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DiagnoseKind {
    MseDt,
    Springboard,
    Truncation,
    Planarity,
    EtaSweep,
}

impl DiagnoseKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::MseDt => "mse-dt",
            Self::Springboard => "springboard",
            Self::Truncation => "truncation",
            Self::Planarity => "planarity",
            Self::EtaSweep => "eta-sweep",
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured sampler from seeded x_T ~ N(0, I).
    #[command(after_help = "Outputs:\n  endpoints.csv   chain,x0,x1,...\n  trajectory.csv  t,chain,x0,x1,...  (with --trajectories)\n  manifest.json")]
    Sample {
        #[command(flatten)]
        run: RunArgs,
        /// Also write every visited state.
        #[arg(long)]
        trajectories: bool,
    },
    /// Error-analysis measurements.
    #[command(after_help = "Outputs <kind>.csv plus a <kind>.json sidecar manifest.\n  \
        mse-dt       dt,mse\n  \
        springboard  iteration,t,mse_springboard,mse_future\n  \
        truncation   t,mean,std,accumulated\n  \
        planarity    chain,fraction\n  \
        eta-sweep    N,eta,method,mse_mean,mse_std")]
    Diagnose {
        kind: DiagnoseKind,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Pick (k, h) by endpoint error on a small warm-up batch.
    #[command(after_help = "Outputs:\n  search.csv  k,h,mse,chosen\n  manifest.json")]
    Search {
        #[command(flatten)]
        run: RunArgs,
        /// Candidate pairs, e.g. `1,1;2,1`. Defaults to all h <= k <= 3.
        #[arg(long)]
        candidates: Option<String>,
        /// Warm-up chain count.
        #[arg(long)]
        warmup: Option<usize>,
    },
    /// Randomized check of the higher-order coefficient inequality.
    Prop1 {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        nmax: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check one tuple `t_prev,t_cur,eps` instead of sampling.
        #[arg(long, allow_hyphen_values = true)]
        tuple: Option<String>,
    },
    /// Endpoint MSE, sliced W2 and Gaussian W2 of the configured sampler.
    #[command(after_help = "Outputs:\n  metrics.json  [{metric,value,n,n_proj,seed}]\n  manifest.json")]
    Metrics {
        #[command(flatten)]
        run: RunArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample { run, trajectories } => commands::sample(&run.config, run.seed, run.chains, &run.out, trajectories),
        Command::Diagnose { kind, run } => commands::diagnose(kind, &run.config, run.seed, run.chains, &run.out),
        Command::Search { run, candidates, warmup } => {
            commands::search(&run.config, run.seed, run.chains, &run.out, candidates.as_deref(), warmup)
        }
        Command::Prop1 { samples, nmax, seed, tuple } => commands::prop1(samples, nmax, seed, tuple.as_deref()),
        Command::Metrics { run } => commands::metrics(&run.config, run.seed, run.chains, &run.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
