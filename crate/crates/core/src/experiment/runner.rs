use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{compute_metrics, AnalyticsError, MetricsLedger, SideMetrics};
use crate::channel::{Outcome, TxnRecord};
use crate::engine::{run, EngineConfig, EngineError};
use crate::workload::{generate, WorkloadError};

use super::config::{ConfigError, ExperimentConfig, ResolvedExperiment};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{cell}: workload generation failed: {source}")]
    Workload {
        cell: CellId,
        #[source]
        source: WorkloadError,
    },
    #[error("{cell}: {source}")]
    Engine {
        cell: CellId,
        #[source]
        source: Box<EngineError>,
    },
    #[error("{cell}: {source}")]
    Metrics {
        cell: CellId,
        #[source]
        source: AnalyticsError,
    },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("writing {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("writing {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Coordinates of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellId {
    pub policy: String,
    pub sweep_value: Option<f64>,
    pub run: usize,
    pub seed: u64,
}

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "policy {} run {} (seed {})", self.policy, self.run, self.seed)?;
        if let Some(v) = self.sweep_value {
            write!(f, " at sweep value {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
    /// Replaces the configured base seed.
    pub seed: Option<u64>,
    pub format: OutputFormat,
    pub per_txn: bool,
}

/// Run seed: first eight bytes (big endian) of
/// `sha256("{base}/{policy}/{sweep value bits}/{run}")`.
pub fn derive_seed(base: u64, policy: &str, sweep_value: Option<f64>, run: usize) -> u64 {
    let sweep = match sweep_value {
        Some(v) => format!("{:016x}", v.to_bits()),
        None => "-".to_owned(),
    };
    let digest = Sha256::digest(format!("{base}/{policy}/{sweep}/{run}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    #[serde(flatten)]
    pub cell: CellId,
    pub metrics: MetricsLedger,
    pub event_count: u64,
    pub last_event_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: String,
    pub sweep_value: Option<f64>,
    pub runs: usize,
    pub columns: BTreeMap<String, ColumnStats>,
}

impl SummaryRow {
    pub fn stat(&self, column: &str) -> Option<&ColumnStats> {
        self.columns.get(column)
    }
}

/// One transaction of one run, for per-transaction exports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TxnRow {
    pub policy: String,
    pub sweep_value: Option<f64>,
    pub run: usize,
    pub id: u64,
    pub direction: &'static str,
    pub arrival_time: f64,
    pub amount: u64,
    pub max_buffering_time: f64,
    pub feasible_on_arrival: bool,
    pub outcome: &'static str,
    pub outcome_time: Option<f64>,
    pub in_window: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub name: Option<String>,
    pub version: &'static str,
    pub base_seed: u64,
    pub format: OutputFormat,
    pub per_txn: bool,
    pub sweep_parameter: Option<&'static str>,
    pub cells: Vec<CellId>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub transactions: Option<Vec<TxnRow>>,
    pub manifest: Manifest,
}

const SIDE_COLUMNS: [&str; 11] = [
    "arrived_count",
    "arrived_amount",
    "executed_count",
    "executed_amount",
    "dropped_count",
    "dropped_amount",
    "pending_count",
    "pending_amount",
    "sacrificed_count",
    "success_rate",
    "normalized_throughput",
];

/// Numeric result columns in output order.
pub fn metric_columns() -> Vec<String> {
    let mut cols = vec!["window_start".to_owned(), "window_end".to_owned()];
    for prefix in ["", "a_", "b_"] {
        cols.extend(SIDE_COLUMNS.iter().map(|c| format!("{prefix}{c}")));
    }
    cols.push("event_count".to_owned());
    cols
}

fn side_values(m: &SideMetrics) -> [f64; 11] {
    [
        m.arrived_count as f64,
        m.arrived_amount as f64,
        m.executed_count as f64,
        m.executed_amount as f64,
        m.dropped_count as f64,
        m.dropped_amount as f64,
        m.pending_count as f64,
        m.pending_amount as f64,
        m.sacrificed_count as f64,
        m.success_rate(),
        m.normalized_throughput(),
    ]
}

impl ResultRow {
    /// Values aligned with [`metric_columns`].
    pub fn values(&self) -> Vec<f64> {
        let m = &self.metrics;
        let mut v = vec![m.window_start, m.window_end];
        for side in [&m.total, &m.a, &m.b] {
            v.extend(side_values(side));
        }
        v.push(self.event_count as f64);
        v
    }
}

/// `%.9g`, trimmed of trailing zeros.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..9).contains(&exp) {
        let s = format!("{:.8e}", x);
        let (mantissa, e) = s.split_once('e').unwrap_or((&s, "0"));
        let mantissa = trim_zeros(mantissa);
        let e: i32 = e.parse().unwrap_or(0);
        return format!("{mantissa}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_owned()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn format_value(column: &str, x: f64) -> String {
    if column.ends_with("_count") || column.ends_with("_amount") {
        format!("{}", x as u64)
    } else {
        format_float(x)
    }
}

struct Cell {
    policy_index: usize,
    id: CellId,
}

fn cells(resolved: &ResolvedExperiment, base_seed: u64) -> Vec<Cell> {
    let config = &resolved.config;
    let mut out = Vec::new();
    for (policy_index, entry) in config.policies.iter().enumerate() {
        let policy = entry.id();
        for sweep_value in config.sweep_values() {
            for run in 0..config.repetitions {
                out.push(Cell {
                    policy_index,
                    id: CellId {
                        policy: policy.clone(),
                        sweep_value,
                        run,
                        seed: derive_seed(base_seed, &policy, sweep_value, run),
                    },
                });
            }
        }
    }
    out
}

fn run_cell(
    resolved: &ResolvedExperiment,
    cell: &Cell,
    per_txn: bool,
) -> Result<(ResultRow, Vec<TxnRow>), ExperimentError> {
    let config = &resolved.config;
    let id = &cell.id;
    let demand = resolved.demand_at(id.sweep_value);
    let spec = resolved.policy_at(cell.policy_index, id.sweep_value);
    let workload = generate(&demand, id.seed, config.capacity).map_err(|source| ExperimentError::Workload {
        cell: id.clone(),
        source,
    })?;
    let mut engine = EngineConfig::new(config.capacity, config.initial_balance_a);
    if let Some(h) = config.horizon {
        engine = engine.with_horizon(h);
    }
    let result = run(&engine, &spec, &workload).map_err(|source| ExperimentError::Engine {
        cell: id.clone(),
        source: Box::new(source),
    })?;
    let metrics = compute_metrics(&result, config.window_fraction).map_err(|source| ExperimentError::Metrics {
        cell: id.clone(),
        source,
    })?;
    let txns = if per_txn {
        result.journal.iter().map(|r| txn_row(id, r, &metrics)).collect()
    } else {
        Vec::new()
    };
    let row = ResultRow {
        cell: id.clone(),
        metrics,
        event_count: result.event_count,
        last_event_time: result.last_event_time,
    };
    Ok((row, txns))
}

fn txn_row(cell: &CellId, record: &TxnRecord, metrics: &MetricsLedger) -> TxnRow {
    let t = &record.transaction;
    TxnRow {
        policy: cell.policy.clone(),
        sweep_value: cell.sweep_value,
        run: cell.run,
        id: t.id.0,
        direction: t.direction.origin(),
        arrival_time: t.arrival_time,
        amount: t.amount,
        max_buffering_time: t.max_buffering_time,
        feasible_on_arrival: record.feasible_on_arrival,
        outcome: record.outcome.label(),
        outcome_time: match record.outcome {
            Outcome::Pending => None,
            other => other.time(),
        },
        in_window: t.arrival_time >= metrics.window_start && t.arrival_time <= metrics.window_end,
    }
}

/// Mean, min and max of every metric column per (policy, sweep value).
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let columns = metric_columns();
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut groups: Vec<Vec<&ResultRow>> = Vec::new();
    for row in rows {
        match groups
            .iter_mut()
            .find(|g| g[0].cell.policy == row.cell.policy && g[0].cell.sweep_value == row.cell.sweep_value)
        {
            Some(g) => g.push(row),
            None => groups.push(vec![row]),
        }
    }
    for group in groups {
        let values: Vec<Vec<f64>> = group.iter().map(|r| r.values()).collect();
        let mut stats = BTreeMap::new();
        for (j, name) in columns.iter().enumerate() {
            let col: Vec<f64> = values.iter().map(|v| v[j]).collect();
            stats.insert(
                name.clone(),
                ColumnStats {
                    mean: col.iter().sum::<f64>() / col.len() as f64,
                    min: col.iter().copied().fold(f64::INFINITY, f64::min),
                    max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                },
            );
        }
        out.push(SummaryRow {
            policy: group[0].cell.policy.clone(),
            sweep_value: group[0].cell.sweep_value,
            runs: group.len(),
            columns: stats,
        });
    }
    out
}

/// Runs every (policy, sweep value, repetition) cell. Output order does not
/// depend on the number of worker threads.
pub fn execute(resolved: &ResolvedExperiment, options: &RunOptions) -> Result<ExperimentOutput, ExperimentError> {
    let config = &resolved.config;
    let base_seed = options.seed.unwrap_or(config.base_seed);
    let cells = cells(resolved, base_seed);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = options.jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let results: Vec<(ResultRow, Vec<TxnRow>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(resolved, cell, options.per_txn))
            .collect::<Result<_, _>>()
    })?;
    let mut rows = Vec::with_capacity(results.len());
    let mut transactions = Vec::new();
    for (row, txns) in results {
        rows.push(row);
        transactions.extend(txns);
    }
    let summary = summarize(&rows);
    let manifest = Manifest {
        name: config.name.clone(),
        version: env!("CARGO_PKG_VERSION"),
        base_seed,
        format: options.format,
        per_txn: options.per_txn,
        sweep_parameter: config.sweep.as_ref().map(|s| s.parameter.as_str()),
        cells: cells.into_iter().map(|c| c.id).collect(),
        config: config.clone(),
    };
    Ok(ExperimentOutput {
        rows,
        summary,
        transactions: options.per_txn.then_some(transactions),
        manifest,
    })
}

fn sweep_cell(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn write_results_csv(path: &Path, output: &ExperimentOutput) -> Result<(), ExperimentError> {
    let csv_err = |source| ExperimentError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let columns = metric_columns();
    let mut header = vec!["policy".to_owned(), "sweep_value".into(), "run".into(), "seed".into()];
    header.extend(columns.iter().cloned());
    header.push("last_event_time".into());
    w.write_record(&header).map_err(csv_err)?;
    for row in &output.rows {
        let mut rec = vec![
            row.cell.policy.clone(),
            sweep_cell(row.cell.sweep_value),
            row.cell.run.to_string(),
            row.cell.seed.to_string(),
        ];
        rec.extend(columns.iter().zip(row.values()).map(|(c, v)| format_value(c, v)));
        rec.push(format_float(row.last_event_time));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| ExperimentError::Output {
        path: path.to_owned(),
        source,
    })
}

fn write_summary_csv(path: &Path, output: &ExperimentOutput) -> Result<(), ExperimentError> {
    let csv_err = |source| ExperimentError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let columns = metric_columns();
    let mut header = vec!["policy".to_owned(), "sweep_value".into(), "runs".into()];
    for c in &columns {
        for stat in ["mean", "min", "max"] {
            header.push(format!("{c}_{stat}"));
        }
    }
    w.write_record(&header).map_err(csv_err)?;
    for row in &output.summary {
        let mut rec = vec![row.policy.clone(), sweep_cell(row.sweep_value), row.runs.to_string()];
        for c in &columns {
            let s = &row.columns[c];
            // shortest round-trip form, so the mean is exact rather than rounded
            rec.push(s.mean.to_string());
            rec.push(format_value(c, s.min));
            rec.push(format_value(c, s.max));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| ExperimentError::Output {
        path: path.to_owned(),
        source,
    })
}

fn write_transactions_csv(path: &Path, rows: &[TxnRow]) -> Result<(), ExperimentError> {
    let csv_err = |source| ExperimentError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "policy",
        "sweep_value",
        "run",
        "id",
        "direction",
        "arrival_time",
        "amount",
        "max_buffering_time",
        "feasible_on_arrival",
        "outcome",
        "outcome_time",
        "in_window",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.policy.clone(),
            sweep_cell(r.sweep_value),
            r.run.to_string(),
            r.id.to_string(),
            r.direction.to_owned(),
            format_float(r.arrival_time),
            r.amount.to_string(),
            format_float(r.max_buffering_time),
            r.feasible_on_arrival.to_string(),
            r.outcome.to_owned(),
            r.outcome_time.map(format_float).unwrap_or_default(),
            r.in_window.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| ExperimentError::Output {
        path: path.to_owned(),
        source,
    })
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(|source| ExperimentError::Output {
        path: path.to_owned(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| ExperimentError::Json {
        path: path.to_owned(),
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|source| ExperimentError::Output {
            path: path.to_owned(),
            source,
        })
}

/// Writes results, summary, manifest and (if collected) per-transaction
/// rows into `out_dir`. Files already written are removed if a later one
/// fails.
pub fn write_outputs(out_dir: &Path, output: &ExperimentOutput) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Output {
        path: out_dir.to_owned(),
        source,
    })?;
    let mut written = Vec::new();
    let result = write_all(out_dir, output, &mut written);
    if result.is_err() {
        for path in &written {
            let _ = std::fs::remove_file(path);
        }
    }
    result.map(|_| written)
}

fn write_all(out_dir: &Path, output: &ExperimentOutput, written: &mut Vec<PathBuf>) -> Result<(), ExperimentError> {
    let mut step = |name: &str, f: &dyn Fn(&Path) -> Result<(), ExperimentError>| {
        let path = out_dir.join(name);
        written.push(path.clone());
        f(&path)
    };
    match output.manifest.format {
        OutputFormat::Csv => {
            step("results.csv", &|p| write_results_csv(p, output))?;
            step("summary.csv", &|p| write_summary_csv(p, output))?;
        }
        OutputFormat::Json => {
            step("results.json", &|p| write_json(p, &output.rows))?;
            step("summary.json", &|p| write_json(p, &output.summary))?;
        }
    }
    if let Some(txns) = &output.transactions {
        step("transactions.csv", &|p| write_transactions_csv(p, txns))?;
    }
    step("manifest.json", &|p| write_json(p, &output.manifest))
}

/// Loads `config_path`, runs it and writes the outputs into `out_dir`.
pub fn run_experiment(
    config_path: &Path,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<ExperimentOutput, ExperimentError> {
    let config = ExperimentConfig::load(config_path)?;
    let base_dir = config_path.parent().unwrap_or_else(|| Path::new("."));
    let resolved = config.resolve(base_dir)?;
    let output = execute(&resolved, options)?;
    write_outputs(out_dir, &output)?;
    Ok(output)
}
