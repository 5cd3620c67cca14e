//! Config-driven Monte-Carlo experiments: sweeps over pilot length `G` and
//! subcarrier count `P`, per-trial metrics, aggregation and result files.

pub mod config;
pub mod metrics;
pub mod output;
pub mod plot;
pub mod runner;

pub use config::{Algorithm, ExperimentConfig, PilotKind, SystemSpec};
pub use metrics::{compute_nmse, compute_pe, NMSE_FLOOR_DB};
pub use output::{write_outputs, Summary};
pub use runner::{run_experiment, se_overlay, CellSummary, ExperimentResult, ResultRecord, SePoint, TrialFailure};
