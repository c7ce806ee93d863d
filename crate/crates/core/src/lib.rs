//! Fair V2G discharging with a decentralized whale optimizer.
//!
//! An edge computing node (ECN) searches for one common discharge rate for
//! every available EV. EVs and the aggregator only expose evaluations of
//! their private costs, and those evaluations are masked by additive
//! shuffling before the ECN sees them. Centralized CWOA/GWO baselines and a
//! 1-D grid oracle provide the comparison points.

pub mod baselines;
pub mod config;
pub mod cost;
pub mod dwoa;
pub mod exec;
pub mod fleet;
pub mod oracle;
pub mod orchestrator;
pub mod record;
pub mod rng;
pub mod scenario;
pub mod shuffle;
pub mod stats;
pub mod topology;

pub use config::{load_config, ConfigError, ScenarioConfig};
pub use exec::Execution;
pub use orchestrator::{run_optimization, run_scenario, OptimizerConfig, SimulationConfig};
pub use record::{export_run, import_run, RunRecord};
pub use scenario::Scenario;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error(transparent)]
    Cost(#[from] cost::CostError),
    #[error(transparent)]
    Fleet(#[from] fleet::FleetError),
    #[error(transparent)]
    Topology(#[from] topology::TopologyError),
    #[error(transparent)]
    Protocol(#[from] shuffle::ProtocolError),
    #[error(transparent)]
    Dwoa(#[from] dwoa::DwoaError),
    #[error(transparent)]
    Record(#[from] record::RecordError),
}

impl Error {
    /// True for problems with the user's configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Invalid { .. })
    }
}
