//! TOML experiment configuration.
//!
//! ```toml
//! capacity = 300
//! initial_balance_a = 0
//! initial_balance_b = 300
//! repetitions = 10
//! base_seed = 1
//!
//! [demand.a]
//! rate = 0.3333333333333333
//! count = 500
//! amount = { kind = "fixed", value = 50 }
//! deadline = { kind = "uniform", max = 10.0 }
//!
//! [demand.b]
//! # ...
//!
//! [[policies]]
//! kind = "pmde"
//!
//! [sweep]
//! parameter = "max_buffering_time"
//! values = [0, 10, 20]
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Amount, Time};
use crate::policy::{BufferConfig, BufferDiscipline, PolicyKind, PolicySpec, DEFAULT_CHECK_INTERVAL};
use crate::workload::{
    load_empirical, AmountDist, DeadlineDist, DemandSpec, EmpiricalDataset, EmpiricalOptions, SideDemand, Stop,
    WorkloadError,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("config field `{field}`: {source}")]
    Dataset {
        field: String,
        #[source]
        source: WorkloadError,
    },
}

fn invalid<T>(field: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AmountConfig {
    Fixed {
        value: Amount,
    },
    Gaussian {
        mean: f64,
        std: f64,
        #[serde(default = "one")]
        low: Amount,
        /// Defaults to the channel capacity.
        high: Option<Amount>,
    },
    Uniform {
        #[serde(default = "one")]
        low: Amount,
        high: Option<Amount>,
    },
    Empirical {
        path: PathBuf,
        amount_column: Option<String>,
        /// Empty string disables label filtering.
        label_column: Option<String>,
        keep_label: Option<String>,
        delimiter: Option<char>,
    },
}

fn one() -> Amount {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SideConfig {
    pub rate: f64,
    pub count: Option<usize>,
    pub duration: Option<Time>,
    pub amount: AmountConfig,
    pub deadline: DeadlineDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandConfig {
    pub a: SideConfig,
    pub b: SideConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    /// Row label; defaults to the policy's generated id.
    pub name: Option<String>,
    pub kind: PolicyKind,
    #[serde(default)]
    pub discipline: BufferDiscipline,
    #[serde(default)]
    pub immediate_processing: bool,
    #[serde(default = "default_interval")]
    pub check_interval: Time,
    #[serde(default)]
    pub buffer_config: BufferConfig,
}

fn default_interval() -> Time {
    DEFAULT_CHECK_INTERVAL
}

impl PolicyEntry {
    pub fn spec(&self) -> PolicySpec {
        PolicySpec {
            kind: self.kind,
            discipline: self.discipline,
            immediate_processing: self.immediate_processing,
            check_interval: self.check_interval,
            buffer_config: self.buffer_config,
        }
    }

    pub fn id(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.spec().id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Bound of the buffering-time distribution on both sides.
    MaxBufferingTime,
    /// PRI check interval.
    CheckInterval,
    /// Fixed amount on both sides.
    FixedAmount,
    RateA,
    RateB,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::MaxBufferingTime => "max_buffering_time",
            SweepParameter::CheckInterval => "check_interval",
            SweepParameter::FixedAmount => "fixed_amount",
            SweepParameter::RateA => "rate_a",
            SweepParameter::RateB => "rate_b",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

fn default_repetitions() -> usize {
    10
}

fn default_window() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub capacity: Amount,
    pub initial_balance_a: Amount,
    pub initial_balance_b: Amount,
    pub demand: DemandConfig,
    pub policies: Vec<PolicyEntry>,
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_window")]
    pub window_fraction: f64,
    /// Stop processing events after this time; unset runs until every
    /// transaction is resolved.
    pub horizon: Option<Time>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_owned(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn sweep_values(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.capacity == 0 {
            return invalid("capacity", "must be at least 1");
        }
        if self.initial_balance_a.checked_add(self.initial_balance_b) != Some(self.capacity) {
            return invalid(
                "initial_balance_b",
                format!(
                    "initial balances {} + {} must sum to capacity {}",
                    self.initial_balance_a, self.initial_balance_b, self.capacity
                ),
            );
        }
        if self.repetitions == 0 {
            return invalid("repetitions", "must be at least 1");
        }
        if !(self.window_fraction > 0.0 && self.window_fraction <= 1.0) {
            return invalid("window_fraction", "must lie in (0, 1]");
        }
        if let Some(h) = self.horizon {
            if !(h.is_finite() && h > 0.0) {
                return invalid("horizon", "must be positive and finite");
            }
        }
        for (label, side) in [("a", &self.demand.a), ("b", &self.demand.b)] {
            validate_side(side, &format!("demand.{label}"), self.capacity)?;
        }
        if self.policies.is_empty() {
            return invalid("policies", "at least one policy is required");
        }
        for (i, p) in self.policies.iter().enumerate() {
            if let Err(e) = p.spec().validate() {
                return invalid(format!("policies[{i}].check_interval"), e.to_string());
            }
        }
        let mut ids: Vec<String> = self.policies.iter().map(PolicyEntry::id).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return invalid("policies", format!("duplicate policy id {:?}; set `name`", w[0]));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return invalid("sweep.values", "must not be empty");
            }
            for (i, &v) in sweep.values.iter().enumerate() {
                let field = format!("sweep.values[{i}]");
                let ok = v.is_finite()
                    && match sweep.parameter {
                        SweepParameter::MaxBufferingTime => v >= 0.0,
                        SweepParameter::CheckInterval | SweepParameter::RateA | SweepParameter::RateB => v > 0.0,
                        SweepParameter::FixedAmount => v >= 1.0 && v.fract() == 0.0 && v <= self.capacity as f64,
                    };
                if !ok {
                    return invalid(field, format!("{v} is not a valid {}", sweep.parameter.as_str()));
                }
            }
        }
        Ok(())
    }

    /// Loads datasets (relative paths resolve against `base_dir`).
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedExperiment, ConfigError> {
        self.validate()?;
        let side = |label: &str, cfg: &SideConfig| -> Result<SideDemand, ConfigError> {
            let stop = match (cfg.count, cfg.duration) {
                (Some(n), _) => Stop::Count(n),
                (None, Some(d)) => Stop::Duration(d),
                (None, None) => unreachable!("validated"),
            };
            let amount = resolve_amount(&cfg.amount, &format!("demand.{label}.amount"), self.capacity, base_dir)?;
            Ok(SideDemand {
                rate: cfg.rate,
                stop,
                amount,
                deadline: cfg.deadline,
            })
        };
        let demand = DemandSpec {
            a: side("a", &self.demand.a)?,
            b: side("b", &self.demand.b)?,
        };
        Ok(ResolvedExperiment {
            config: self.clone(),
            demand,
        })
    }
}

fn validate_side(side: &SideConfig, field: &str, capacity: Amount) -> Result<(), ConfigError> {
    if !(side.rate.is_finite() && side.rate > 0.0) {
        return invalid(format!("{field}.rate"), "must be positive");
    }
    match (side.count, side.duration) {
        (Some(_), Some(_)) => return invalid(format!("{field}.count"), "set either count or duration, not both"),
        (None, None) => return invalid(format!("{field}.count"), "one of count or duration is required"),
        (None, Some(d)) if !(d.is_finite() && d > 0.0) => {
            return invalid(format!("{field}.duration"), "must be positive")
        }
        _ => {}
    }
    if let Err(e) = side.deadline.validate() {
        return invalid(format!("{field}.deadline"), e.to_string());
    }
    let check = |dist: AmountDist| {
        dist.validate(capacity)
            .or_else(|e| invalid(format!("{field}.amount"), e.to_string()))
    };
    match side.amount {
        AmountConfig::Fixed { value } => check(AmountDist::Fixed(value)),
        AmountConfig::Gaussian { mean, std, low, high } => check(AmountDist::GaussianTruncated {
            mean,
            std,
            low,
            high: high.unwrap_or(capacity),
        }),
        AmountConfig::Uniform { low, high } => check(AmountDist::UniformInt {
            low,
            high: high.unwrap_or(capacity),
        }),
        AmountConfig::Empirical { .. } => Ok(()),
    }
}

fn resolve_amount(
    config: &AmountConfig,
    field: &str,
    capacity: Amount,
    base_dir: &Path,
) -> Result<AmountDist, ConfigError> {
    Ok(match config {
        AmountConfig::Fixed { value } => AmountDist::Fixed(*value),
        AmountConfig::Gaussian { mean, std, low, high } => AmountDist::GaussianTruncated {
            mean: *mean,
            std: *std,
            low: *low,
            high: high.unwrap_or(capacity),
        },
        AmountConfig::Uniform { low, high } => AmountDist::UniformInt {
            low: *low,
            high: high.unwrap_or(capacity),
        },
        AmountConfig::Empirical {
            path,
            amount_column,
            label_column,
            keep_label,
            delimiter,
        } => {
            let defaults = EmpiricalOptions::default();
            let options = EmpiricalOptions {
                amount_column: amount_column.clone().unwrap_or(defaults.amount_column),
                label_column: match label_column.as_deref() {
                    Some("") => None,
                    Some(c) => Some(c.to_owned()),
                    None => defaults.label_column,
                },
                keep_label: keep_label.clone().unwrap_or(defaults.keep_label),
                delimiter: delimiter.unwrap_or(defaults.delimiter),
            };
            let full = if path.is_absolute() {
                path.clone()
            } else {
                base_dir.join(path)
            };
            let data = load_empirical(&full, &options, capacity).map_err(|source| ConfigError::Dataset {
                field: format!("{field}.path"),
                source,
            })?;
            AmountDist::Empirical(Arc::new(data))
        }
    })
}

/// A validated configuration with datasets loaded.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    pub demand: DemandSpec,
}

impl ResolvedExperiment {
    pub fn datasets(&self) -> Vec<&EmpiricalDataset> {
        [&self.demand.a.amount, &self.demand.b.amount]
            .into_iter()
            .filter_map(|d| match d {
                AmountDist::Empirical(data) => Some(data.as_ref()),
                _ => None,
            })
            .collect()
    }

    /// Workload parameters at one sweep point.
    pub fn demand_at(&self, sweep_value: Option<f64>) -> DemandSpec {
        let mut demand = self.demand.clone();
        let (Some(sweep), Some(v)) = (&self.config.sweep, sweep_value) else {
            return demand;
        };
        match sweep.parameter {
            SweepParameter::MaxBufferingTime => {
                for side in [&mut demand.a, &mut demand.b] {
                    side.deadline = match side.deadline {
                        DeadlineDist::Constant { .. } => DeadlineDist::Constant { value: v },
                        DeadlineDist::Uniform { .. } => DeadlineDist::Uniform { max: v },
                    };
                }
            }
            SweepParameter::FixedAmount => {
                demand.a.amount = AmountDist::Fixed(v as Amount);
                demand.b.amount = AmountDist::Fixed(v as Amount);
            }
            SweepParameter::RateA => demand.a.rate = v,
            SweepParameter::RateB => demand.b.rate = v,
            SweepParameter::CheckInterval => {}
        }
        demand
    }

    pub fn policy_at(&self, index: usize, sweep_value: Option<f64>) -> PolicySpec {
        let mut spec = self.config.policies[index].spec();
        if let (Some(sweep), Some(v)) = (&self.config.sweep, sweep_value) {
            if sweep.parameter == SweepParameter::CheckInterval {
                spec.check_interval = v;
            }
        }
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
capacity = 300
initial_balance_a = 0
initial_balance_b = 300

[demand.a]
rate = 0.5
count = 10
amount = { kind = "fixed", value = 50 }
deadline = { kind = "uniform", max = 10.0 }

[demand.b]
rate = 0.25
duration = 100.0
amount = { kind = "gaussian", mean = 100.0, std = 50.0 }
deadline = { kind = "constant", value = 5.0 }

[[policies]]
kind = "pmde"

[[policies]]
kind = "pri"
immediate_processing = true

[sweep]
parameter = "max_buffering_time"
values = [0, 1, 2]
"#;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_toml(text, Path::new("test.toml"))
    }

    fn field_of(err: ConfigError) -> String {
        match err {
            ConfigError::Invalid { field, .. } => field,
            other => panic!("expected Invalid, got {other}"),
        }
    }

    #[test]
    fn parses_and_applies_defaults() {
        let cfg = parse(BASE).unwrap();
        assert_eq!(cfg.repetitions, 10);
        assert_eq!(cfg.window_fraction, 0.8);
        assert_eq!(cfg.policies[1].check_interval, 3.0);
        assert_eq!(cfg.policies[1].id(), "pri-ip/oldest-first/both-shared");
        let resolved = cfg.resolve(Path::new(".")).unwrap();
        assert!(matches!(
            resolved.demand.b.amount,
            AmountDist::GaussianTruncated { low: 1, high: 300, .. }
        ));
        let at2 = resolved.demand_at(Some(2.0));
        assert_eq!(at2.a.deadline, DeadlineDist::Uniform { max: 2.0 });
        assert_eq!(at2.b.deadline, DeadlineDist::Constant { value: 2.0 });
    }

    #[test]
    fn unbalanced_initial_balances_name_the_field() {
        let text = BASE.replace("initial_balance_b = 300", "initial_balance_b = 299");
        assert_eq!(field_of(parse(&text).unwrap_err()), "initial_balance_b");
    }

    #[test]
    fn bad_rate_names_the_side() {
        let text = BASE.replace("rate = 0.25", "rate = -1.0");
        assert_eq!(field_of(parse(&text).unwrap_err()), "demand.b.rate");
    }

    #[test]
    fn oversized_amount_is_rejected() {
        let text = BASE.replace("value = 50", "value = 500");
        assert_eq!(field_of(parse(&text).unwrap_err()), "demand.a.amount");
    }

    #[test]
    fn empty_sweep_rejected() {
        let text = BASE.replace("values = [0, 1, 2]", "values = []");
        assert_eq!(field_of(parse(&text).unwrap_err()), "sweep.values");
    }

    #[test]
    fn duplicate_policies_rejected() {
        let text = format!("{BASE}\n[[policies]]\nkind = \"pmde\"\n");
        // appended table lands after [sweep]; TOML still treats it as an array element
        assert_eq!(field_of(parse(&text).unwrap_err()), "policies");
    }

    #[test]
    fn syntax_and_unknown_fields_are_parse_errors() {
        let err = parse("capacity = ").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
        let err = parse(&BASE.replace("count = 10", "count = 10\ncolour = 3")).unwrap_err();
        match err {
            ConfigError::Parse { message, .. } => assert!(message.contains("colour"), "{message}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_pri_interval_names_policy() {
        let text = BASE.replace(
            "immediate_processing = true",
            "immediate_processing = true\ncheck_interval = 0.0",
        );
        assert_eq!(field_of(parse(&text).unwrap_err()), "policies[1].check_interval");
    }

    #[test]
    fn missing_dataset_is_reported_with_field() {
        let text = BASE.replace(
            r#"amount = { kind = "fixed", value = 50 }"#,
            r#"amount = { kind = "empirical", path = "does/not/exist.csv" }"#,
        );
        let cfg = parse(&text).unwrap();
        match cfg.resolve(Path::new("/nonexistent")).unwrap_err() {
            ConfigError::Dataset { field, .. } => assert_eq!(field, "demand.a.amount.path"),
            other => panic!("unexpected {other}"),
        }
    }
}
