//! Synthetic demand: Poisson arrivals on each side of the channel with
//! configurable amount and deadline distributions, plus an empirical amount
//! distribution loaded from a delimited file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Amount, Direction, Time, Transaction};

const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: line {line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{}: no column named {column:?}", path.display())]
    MissingColumn { path: PathBuf, column: String },
    #[error("{}: no admissible amounts left after filtering ({stats:?})", path.display())]
    EmptyAfterFilter { path: PathBuf, stats: FilterStats },
}

/// Row counts seen while loading an empirical dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FilterStats {
    pub rows_read: usize,
    pub dropped_by_label: usize,
    pub dropped_by_capacity: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalDataset {
    /// Admissible amounts, ascending.
    pub amounts: Vec<Amount>,
    pub source: PathBuf,
    pub stats: FilterStats,
}

impl EmpiricalDataset {
    pub fn from_amounts(mut amounts: Vec<Amount>, source: impl Into<PathBuf>) -> Result<Self, WorkloadError> {
        let source = source.into();
        if amounts.is_empty() {
            return Err(WorkloadError::EmptyAfterFilter {
                path: source,
                stats: FilterStats::default(),
            });
        }
        amounts.sort_unstable();
        let kept = amounts.len();
        Ok(Self {
            amounts,
            source,
            stats: FilterStats {
                rows_read: kept,
                kept,
                ..FilterStats::default()
            },
        })
    }

    pub fn len(&self) -> usize {
        self.amounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amounts.is_empty()
    }

    pub fn max(&self) -> Amount {
        self.amounts.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmpiricalOptions {
    pub amount_column: String,
    /// Column holding the class label; `None` keeps every row.
    pub label_column: Option<String>,
    pub keep_label: String,
    pub delimiter: char,
}

impl Default for EmpiricalOptions {
    fn default() -> Self {
        Self {
            amount_column: "Amount".to_owned(),
            label_column: Some("Class".to_owned()),
            keep_label: "0".to_owned(),
            delimiter: ',',
        }
    }
}

/// Round half up, never below one coin.
pub fn round_amount(raw: f64) -> Amount {
    let rounded = (raw + 0.5).floor();
    if rounded < 1.0 {
        1
    } else {
        rounded as Amount
    }
}

/// Reads amounts from a delimited file with a header row, keeps rows whose
/// label matches, and discards amounts that do not fit below `capacity`.
pub fn load_empirical(
    path: &Path,
    options: &EmpiricalOptions,
    capacity: Amount,
) -> Result<EmpiricalDataset, WorkloadError> {
    let delimiter = u8::try_from(options.delimiter)
        .map_err(|_| WorkloadError::InvalidDistribution(format!("delimiter {:?} is not ASCII", options.delimiter)))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| WorkloadError::MissingColumn {
                path: path.to_owned(),
                column: name.to_owned(),
            })
    };
    let amount_at = column(&options.amount_column)?;
    let label_at = options.label_column.as_deref().map(column).transpose()?;

    let mut stats = FilterStats::default();
    let mut amounts = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        stats.rows_read += 1;
        let field = |at: usize| {
            record.get(at).map(str::trim).ok_or_else(|| WorkloadError::Parse {
                path: path.to_owned(),
                line,
                message: format!("missing field {at}"),
            })
        };
        if let Some(at) = label_at {
            if field(at)? != options.keep_label {
                stats.dropped_by_label += 1;
                continue;
            }
        }
        let text = field(amount_at)?;
        let raw: f64 = text.parse().map_err(|_| WorkloadError::Parse {
            path: path.to_owned(),
            line,
            message: format!("amount {text:?} is not a number"),
        })?;
        if !raw.is_finite() {
            return Err(WorkloadError::Parse {
                path: path.to_owned(),
                line,
                message: format!("amount {text:?} is not finite"),
            });
        }
        let amount = round_amount(raw);
        if amount >= capacity {
            stats.dropped_by_capacity += 1;
            continue;
        }
        amounts.push(amount);
    }
    stats.kept = amounts.len();
    if amounts.is_empty() {
        return Err(WorkloadError::EmptyAfterFilter {
            path: path.to_owned(),
            stats,
        });
    }
    amounts.sort_unstable();
    Ok(EmpiricalDataset {
        amounts,
        source: path.to_owned(),
        stats,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> WorkloadError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => WorkloadError::Io {
            path: path.to_owned(),
            source,
        },
        other => WorkloadError::Parse {
            path: path.to_owned(),
            line,
            message: format!("{other:?}"),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AmountDist {
    Fixed(Amount),
    /// Normal, rounded to the nearest coin, resampled until inside `[low, high]`.
    GaussianTruncated {
        mean: f64,
        std: f64,
        low: Amount,
        high: Amount,
    },
    UniformInt {
        low: Amount,
        high: Amount,
    },
    Empirical(Arc<EmpiricalDataset>),
}

impl AmountDist {
    pub fn validate(&self, capacity: Amount) -> Result<(), WorkloadError> {
        let bad = |msg: String| Err(WorkloadError::InvalidDistribution(msg));
        match self {
            AmountDist::Fixed(v) if *v == 0 || *v > capacity => {
                bad(format!("fixed amount {v} outside [1, {capacity}]"))
            }
            AmountDist::GaussianTruncated { mean, std, low, high } => {
                if !(mean.is_finite() && std.is_finite() && *std > 0.0) {
                    bad(format!(
                        "gaussian needs finite mean and positive std, got ({mean}, {std})"
                    ))
                } else if *low == 0 || low > high || *high > capacity {
                    bad(format!("gaussian truncation [{low}, {high}] outside [1, {capacity}]"))
                } else {
                    Ok(())
                }
            }
            AmountDist::UniformInt { low, high } if *low == 0 || low > high || *high > capacity => {
                bad(format!("uniform range [{low}, {high}] outside [1, {capacity}]"))
            }
            AmountDist::Empirical(data) if data.is_empty() || data.max() > capacity || data.amounts[0] == 0 => {
                bad(format!(
                    "empirical dataset {} has amounts outside [1, {capacity}]",
                    data.source.display()
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Amount, WorkloadError> {
        Ok(match self {
            AmountDist::Fixed(v) => *v,
            AmountDist::GaussianTruncated { mean, std, low, high } => {
                let normal = Normal::new(*mean, *std).map_err(|e| WorkloadError::InvalidDistribution(e.to_string()))?;
                let (lo, hi) = (*low as f64, *high as f64);
                let mut tries = 0;
                loop {
                    let x = normal.sample(rng).round();
                    if (lo..=hi).contains(&x) {
                        break x as Amount;
                    }
                    tries += 1;
                    if tries == MAX_REJECTIONS {
                        return Err(WorkloadError::InvalidDistribution(format!(
                            "gaussian({mean}, {std}) almost never lands in [{low}, {high}]"
                        )));
                    }
                }
            }
            AmountDist::UniformInt { low, high } => rng.random_range(*low..=*high),
            AmountDist::Empirical(data) => data.amounts[rng.random_range(0..data.len())],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DeadlineDist {
    Constant {
        value: Time,
    },
    /// Uniform on `[0, max]`.
    Uniform {
        max: Time,
    },
}

impl DeadlineDist {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let v = match *self {
            DeadlineDist::Constant { value } => value,
            DeadlineDist::Uniform { max } => max,
        };
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(WorkloadError::InvalidDistribution(format!(
                "buffering time bound {v} must be finite and non-negative"
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Time {
        match *self {
            DeadlineDist::Constant { value } => value,
            DeadlineDist::Uniform { max: 0.0 } => 0.0,
            DeadlineDist::Uniform { max } => rng.random_range(0.0..=max),
        }
    }
}

/// When a side stops generating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stop {
    Count(usize),
    Duration(Time),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SideDemand {
    /// Poisson arrival rate, transactions per second.
    pub rate: f64,
    pub stop: Stop,
    pub amount: AmountDist,
    pub deadline: DeadlineDist,
}

impl SideDemand {
    pub fn validate(&self, capacity: Amount) -> Result<(), WorkloadError> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(WorkloadError::InvalidDistribution(format!(
                "arrival rate must be positive, got {}",
                self.rate
            )));
        }
        if let Stop::Duration(d) = self.stop {
            if !(d.is_finite() && d >= 0.0) {
                return Err(WorkloadError::InvalidDistribution(format!("duration {d} is invalid")));
            }
        }
        self.amount.validate(capacity)?;
        self.deadline.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandSpec {
    pub a: SideDemand,
    pub b: SideDemand,
}

impl DemandSpec {
    pub fn symmetric(side: SideDemand) -> Self {
        Self {
            a: side.clone(),
            b: side,
        }
    }

    pub fn side(&self, direction: Direction) -> &SideDemand {
        match direction {
            Direction::AtoB => &self.a,
            Direction::BtoA => &self.b,
        }
    }
}

struct Draft {
    direction: Direction,
    arrival_time: Time,
    amount: Amount,
    max_buffering_time: Time,
}

fn generate_side(side: &SideDemand, direction: Direction, seed: u64) -> Result<Vec<Draft>, WorkloadError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match direction {
        Direction::AtoB => 1,
        Direction::BtoA => 2,
    });
    let gaps = Exp::new(side.rate).map_err(|e| WorkloadError::InvalidDistribution(e.to_string()))?;
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        if let Stop::Count(n) = side.stop {
            if out.len() >= n {
                break;
            }
        }
        t += gaps.sample(&mut rng);
        if let Stop::Duration(d) = side.stop {
            if t > d {
                break;
            }
        }
        let amount = side.amount.sample(&mut rng)?;
        let max_buffering_time = side.deadline.sample(&mut rng);
        out.push(Draft {
            direction,
            arrival_time: t,
            amount,
            max_buffering_time,
        });
    }
    Ok(out)
}

/// Generates both arrival streams from decorrelated sub-streams of `seed`,
/// merged by arrival time, with ids assigned in merged order.
pub fn generate(demand: &DemandSpec, seed: u64, capacity: Amount) -> Result<Vec<Transaction>, WorkloadError> {
    demand.a.validate(capacity)?;
    demand.b.validate(capacity)?;
    let mut drafts = generate_side(&demand.a, Direction::AtoB, seed)?;
    drafts.extend(generate_side(&demand.b, Direction::BtoA, seed)?);
    drafts.sort_by(|x, y| {
        x.arrival_time
            .total_cmp(&y.arrival_time)
            .then(x.direction.cmp(&y.direction))
    });
    Ok(drafts
        .into_iter()
        .enumerate()
        .map(|(i, d)| Transaction::new(i as u64, d.direction, d.arrival_time, d.amount, d.max_buffering_time))
        .collect())
}
