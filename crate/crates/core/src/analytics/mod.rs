//! Steady-state metrics, the closed-form success rate of the unbuffered
//! channel, and a brute-force optimal scheduler for small instances.

mod birth_death;
mod metrics;
mod oracle;

use thiserror::Error;

use crate::channel::Time;

pub use birth_death::{
    analytical_success_rate, stationary_distribution_closed_form, stationary_distribution_numeric, AnalyticalModel,
    NEAR_UNIT_RATIO,
};
pub use metrics::{compute_metrics, metrics_over, window_bounds, MetricsLedger, SideMetrics};
pub use oracle::{oracle_optimal, Objective, OracleSolution, ScheduledAction, DEFAULT_MAX_ORACLE_SIZE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("no arrivals in window [{start}, {end}]")]
    EmptyWindow { start: Time, end: Time },
    #[error("window fraction must lie in (0, 1], got {0}")]
    BadWindowFraction(f64),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("instance has {size} transactions, exhaustive search allows at most {max}")]
    InstanceTooLarge { size: usize, max: usize },
}
