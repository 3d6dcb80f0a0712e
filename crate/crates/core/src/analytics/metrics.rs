use serde::Serialize;

use crate::channel::{Amount, Direction, Outcome, Time, TxnRecord};
use crate::engine::RunResult;

use super::AnalyticsError;

/// Counts and amounts for the transactions of one direction (or both).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SideMetrics {
    pub arrived_count: u64,
    pub arrived_amount: Amount,
    pub executed_count: u64,
    pub executed_amount: Amount,
    pub dropped_count: u64,
    pub dropped_amount: Amount,
    pub pending_count: u64,
    pub pending_amount: Amount,
    pub sacrificed_count: u64,
}

impl SideMetrics {
    fn add(&mut self, record: &TxnRecord) {
        let amount = record.transaction.amount;
        self.arrived_count += 1;
        self.arrived_amount += amount;
        match record.outcome {
            Outcome::Executed { .. } => {
                self.executed_count += 1;
                self.executed_amount += amount;
            }
            Outcome::Dropped { .. } => {
                self.dropped_count += 1;
                self.dropped_amount += amount;
            }
            Outcome::Pending | Outcome::HorizonTruncated { .. } => {
                self.pending_count += 1;
                self.pending_amount += amount;
            }
        }
        if record.is_sacrificed() {
            self.sacrificed_count += 1;
        }
    }

    /// Executed over arrived, by count. Zero when nothing arrived.
    pub fn success_rate(&self) -> f64 {
        ratio(self.executed_count, self.arrived_count)
    }

    /// Executed over arrived, by amount. Zero when nothing arrived.
    pub fn normalized_throughput(&self) -> f64 {
        ratio(self.executed_amount, self.arrived_amount)
    }

    pub fn identity_holds(&self) -> bool {
        self.arrived_amount == self.executed_amount + self.dropped_amount + self.pending_amount
            && self.arrived_count == self.executed_count + self.dropped_count + self.pending_count
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsLedger {
    pub window_start: Time,
    pub window_end: Time,
    pub total: SideMetrics,
    pub a: SideMetrics,
    pub b: SideMetrics,
}

impl MetricsLedger {
    pub fn side(&self, direction: Direction) -> &SideMetrics {
        match direction {
            Direction::AtoB => &self.a,
            Direction::BtoA => &self.b,
        }
    }

    pub fn success_rate(&self) -> f64 {
        self.total.success_rate()
    }

    pub fn normalized_throughput(&self) -> f64 {
        self.total.normalized_throughput()
    }

    pub fn throughput(&self) -> Amount {
        self.total.executed_amount
    }

    pub fn identity_holds(&self) -> bool {
        self.total.identity_holds()
            && self.a.identity_holds()
            && self.b.identity_holds()
            && self.total.sacrificed_count <= self.total.dropped_count
    }
}

/// Centered window covering `fraction` of `[0, end]`.
pub fn window_bounds(end: Time, fraction: f64) -> (Time, Time) {
    let margin = (end - end * fraction) / 2.0;
    (margin, end - margin)
}

/// Tallies the transactions whose arrival lies in `[start, end]`.
pub fn metrics_over(journal: &[TxnRecord], start: Time, end: Time) -> MetricsLedger {
    let mut ledger = MetricsLedger {
        window_start: start,
        window_end: end,
        total: SideMetrics::default(),
        a: SideMetrics::default(),
        b: SideMetrics::default(),
    };
    for record in journal {
        let t = record.transaction.arrival_time;
        if t < start || t > end {
            continue;
        }
        ledger.total.add(record);
        match record.transaction.direction {
            Direction::AtoB => ledger.a.add(record),
            Direction::BtoA => ledger.b.add(record),
        }
    }
    ledger
}

/// Steady-state metrics: only transactions arriving in the centered
/// `window_fraction` of the run are counted, each wholly by its outcome.
pub fn compute_metrics(result: &RunResult, window_fraction: f64) -> Result<MetricsLedger, AnalyticsError> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(AnalyticsError::BadWindowFraction(window_fraction));
    }
    let (start, end) = window_bounds(result.last_event_time, window_fraction);
    let ledger = metrics_over(&result.journal, start, end);
    if ledger.total.arrived_count == 0 {
        return Err(AnalyticsError::EmptyWindow { start, end });
    }
    Ok(ledger)
}
