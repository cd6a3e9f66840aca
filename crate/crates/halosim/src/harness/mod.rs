//! Monte-Carlo campaign orchestration: configuration, deterministic random
//! streams, the closed-loop engine, experiment drivers, and reporting.

pub mod campaign;
pub mod closedloop;
pub mod config;
pub mod plotdata;
pub mod report;
pub mod rng;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Reference(#[from] crate::reference::ReferenceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub use campaign::{
    campaign_reference, run_control_experiment, run_filter_experiment, run_full_pipeline,
};
pub use config::Config;
pub use report::{aggregate_report, MonteCarloReport};
