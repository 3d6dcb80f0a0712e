//! Config-driven sweeps with seeded repetitions, and the scripted scenarios.

mod config;
mod runner;
mod scenario;

pub use config::{
    AmountConfig, ConfigError, DemandConfig, ExperimentConfig, PolicyEntry, ResolvedExperiment, SideConfig,
    SweepConfig, SweepParameter,
};
pub use runner::{
    derive_seed, execute, format_float, metric_columns, run_experiment, summarize, write_outputs, CellId, ColumnStats,
    ExperimentError, ExperimentOutput, Manifest, OutputFormat, ResultRow, RunOptions, SummaryRow, TxnRow,
};
pub use scenario::{
    counterexample_workload, describe_trace, fig3_workload, policy_by_name, run_scenario, Expected, Scenario,
    ScenarioError, ScenarioReport,
};
