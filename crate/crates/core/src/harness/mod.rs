//! Config-driven experiments: exact runs, learning sweeps, report merging
//! and invariant suites. The `offline-vcg` binary is a thin wrapper.

pub mod checks;
mod commands;
pub mod config;
pub mod report;

pub use checks::{run_suite, SuiteResult, SUITES};
pub use commands::{
    cmd_check, cmd_exact, cmd_learn, cmd_sweep_report, learn_config, write_sweep, CheckReport, EXACT_TOLERANCE,
};
pub use config::{Builtin, DataSpec, DistributionSpec, EvaluationSpec, InstanceSource, LearnerSpec, Metric, OutputSpec, RunConfig};
pub use report::{Aggregate, ExactReport, RunReport, RunRow, Timings};
