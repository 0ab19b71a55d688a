//! Experiment driver for the `longjump` simulators: TOML configs, replica
//! seeding, the shipped experiments and their CSV outputs.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod output;
pub mod stats;

use longjump::coupling::CouplingError;
use longjump::dynamics::DynamicsError;
use longjump::measures::MeasureError;
use longjump::pde::PdeError;
use longjump::tagged::TaggedError;
use longjump::KernelError;
use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig, EXPERIMENTS};
pub use experiments::{run_experiment, run_experiment_with};
pub use output::{replica_rng, Output, ReplicaOrder};
pub use stats::{Check, Report, Summary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Tagged(#[from] TaggedError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error("experiment `{experiment}` needs {what}")]
    Unsupported { experiment: String, what: String },
}

pub type Result<T> = std::result::Result<T, HarnessError>;
