//! Probability-flow ODE samplers for diffusion models with past/future-score
//! timestep skipping, checked against Gaussian-mixture data whose scores and
//! marginals are known in closed form.

pub mod buffer;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod pfdiff;
pub mod rng;
pub mod schedule;
pub mod score;
pub mod solvers;
pub mod table;
pub mod trajectory;

pub use buffer::ScoreBuffer;
pub use error::{Error, Result};
pub use diagnostics::RunSetup;
pub use metrics::SampleSet;
pub use pfdiff::{Mode, PFDiffConfig, Sampler};
pub use rng::ChainNoise;
pub use schedule::{GridKind, NoiseLevel, NoiseSchedule, ScheduleSpec, TimeGrid};
pub use score::{EpsSource, GaussianMixture, MixtureDoc, ScoreModel};
pub use solvers::{NfeCount, SampleRun, Solver, States};
pub use table::{Cell, Table};
pub use trajectory::TrajectoryRecord;
