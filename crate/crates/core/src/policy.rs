//! Scheduling policies for the buffered channel.
//!
//! A policy is three callbacks the engine invokes on arrival, on deadline
//! expiration, and (for interval policies) on a periodic tick. Each returns an
//! ordered batch of actions that must be legal for `ChannelState::apply_batch`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Action, BatchPlanner, BufferEntry, ChannelState, Direction, Time, Transaction};

/// Scan order for buffered transactions. Ties are broken by ascending id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BufferDiscipline {
    #[default]
    OldestFirst,
    YoungestFirst,
    ClosestDeadlineFirst,
    LargestAmountFirst,
    SmallestAmountFirst,
}

impl BufferDiscipline {
    pub const ALL: [BufferDiscipline; 5] = [
        BufferDiscipline::OldestFirst,
        BufferDiscipline::YoungestFirst,
        BufferDiscipline::ClosestDeadlineFirst,
        BufferDiscipline::LargestAmountFirst,
        BufferDiscipline::SmallestAmountFirst,
    ];

    pub fn compare(self, a: &BufferEntry, b: &BufferEntry) -> Ordering {
        let (x, y) = (&a.transaction, &b.transaction);
        let primary = match self {
            BufferDiscipline::OldestFirst => x.arrival_time.total_cmp(&y.arrival_time),
            BufferDiscipline::YoungestFirst => y.arrival_time.total_cmp(&x.arrival_time),
            BufferDiscipline::ClosestDeadlineFirst => x.expiration_time().total_cmp(&y.expiration_time()),
            BufferDiscipline::LargestAmountFirst => y.amount.cmp(&x.amount),
            BufferDiscipline::SmallestAmountFirst => x.amount.cmp(&y.amount),
        };
        primary.then(x.id.cmp(&y.id))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BufferDiscipline::OldestFirst => "oldest-first",
            BufferDiscipline::YoungestFirst => "youngest-first",
            BufferDiscipline::ClosestDeadlineFirst => "closest-deadline-first",
            BufferDiscipline::LargestAmountFirst => "largest-amount-first",
            BufferDiscipline::SmallestAmountFirst => "smallest-amount-first",
        }
    }
}

impl fmt::Display for BufferDiscipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sorts buffer entries by `discipline`.
pub fn sort_buffer(entries: &[BufferEntry], discipline: BufferDiscipline) -> Vec<BufferEntry> {
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| discipline.compare(a, b));
    sorted
}

/// Which nodes can hold transactions back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BufferConfig {
    NoBuffers,
    OnlyA,
    OnlyB,
    BothSeparate,
    #[default]
    BothShared,
}

impl BufferConfig {
    pub const ALL: [BufferConfig; 5] = [
        BufferConfig::NoBuffers,
        BufferConfig::OnlyA,
        BufferConfig::OnlyB,
        BufferConfig::BothSeparate,
        BufferConfig::BothShared,
    ];

    pub fn has_buffer(self, node: Direction) -> bool {
        match self {
            BufferConfig::NoBuffers => false,
            BufferConfig::OnlyA => node == Direction::AtoB,
            BufferConfig::OnlyB => node == Direction::BtoA,
            BufferConfig::BothSeparate | BufferConfig::BothShared => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BufferConfig::NoBuffers => "no-buffers",
            BufferConfig::OnlyA => "only-a",
            BufferConfig::OnlyB => "only-b",
            BufferConfig::BothSeparate => "both-separate",
            BufferConfig::BothShared => "both-shared",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Process feasible immediately.
    Pfi,
    /// Process or match on deadline expiration.
    Pmde,
    /// PMDE with a multi-transaction match covering the deficit.
    GeneralizedPmde,
    /// Process at regular intervals.
    Pri,
}

pub const DEFAULT_CHECK_INTERVAL: Time = 3.0;

fn default_check_interval() -> Time {
    DEFAULT_CHECK_INTERVAL
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    #[serde(default)]
    pub discipline: BufferDiscipline,
    #[serde(default)]
    pub immediate_processing: bool,
    #[serde(default = "default_check_interval")]
    pub check_interval: Time,
    #[serde(default)]
    pub buffer_config: BufferConfig,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("check_interval must be positive and finite, got {0}")]
    BadCheckInterval(Time),
}

impl PolicySpec {
    fn of(kind: PolicyKind) -> Self {
        Self {
            kind,
            discipline: BufferDiscipline::default(),
            immediate_processing: false,
            check_interval: DEFAULT_CHECK_INTERVAL,
            buffer_config: BufferConfig::default(),
        }
    }

    pub fn pfi() -> Self {
        Self::of(PolicyKind::Pfi)
    }

    pub fn pmde() -> Self {
        Self::of(PolicyKind::Pmde)
    }

    pub fn generalized_pmde(discipline: BufferDiscipline) -> Self {
        Self {
            discipline,
            ..Self::of(PolicyKind::GeneralizedPmde)
        }
    }

    pub fn pri(discipline: BufferDiscipline, immediate_processing: bool, check_interval: Time) -> Self {
        Self {
            discipline,
            immediate_processing,
            check_interval,
            ..Self::of(PolicyKind::Pri)
        }
    }

    pub fn with_buffers(mut self, buffer_config: BufferConfig) -> Self {
        self.buffer_config = buffer_config;
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let interval_ok = self.check_interval.is_finite() && self.check_interval > 0.0;
        if self.kind == PolicyKind::Pri && !interval_ok {
            return Err(PolicyError::BadCheckInterval(self.check_interval));
        }
        Ok(())
    }

    /// Stable identifier, e.g. `pri-ip/oldest-first/both-shared`.
    pub fn id(&self) -> String {
        let head = match self.kind {
            PolicyKind::Pfi => return "pfi".to_owned(),
            PolicyKind::Pmde => return format!("pmde/{}", self.buffer_config.as_str()),
            PolicyKind::GeneralizedPmde => "gpmde",
            PolicyKind::Pri if self.immediate_processing => "pri-ip",
            PolicyKind::Pri => "pri-nip",
        };
        let mut id = format!("{head}/{}/{}", self.discipline, self.buffer_config.as_str());
        if self.kind == PolicyKind::Pri && self.check_interval != DEFAULT_CHECK_INTERVAL {
            id.push_str(&format!("/every-{}s", self.check_interval));
        }
        id
    }

    pub fn build(&self) -> Result<Box<dyn Policy>, PolicyError> {
        self.validate()?;
        let buffers = self.buffer_config;
        Ok(match self.kind {
            PolicyKind::Pfi => Box::new(Pfi),
            PolicyKind::Pmde => Box::new(Pmde { buffers }),
            PolicyKind::GeneralizedPmde => Box::new(GeneralizedPmde {
                discipline: self.discipline,
                buffers,
            }),
            PolicyKind::Pri => Box::new(Pri {
                discipline: self.discipline,
                immediate_processing: self.immediate_processing,
                check_interval: self.check_interval,
                buffers,
            }),
        })
    }
}

/// The callbacks an engine drives. Implementations are pure functions of the
/// state handed to them.
pub trait Policy: Send + Sync {
    /// Called right after `txn` was placed in its origin buffer.
    fn on_arrival(&self, state: &ChannelState, txn: &Transaction) -> Vec<Action>;

    /// Called at `txn`'s expiration instant while it is still buffered.
    fn on_expiration(&self, state: &ChannelState, txn: &Transaction) -> Vec<Action>;

    fn on_tick(&self, _state: &ChannelState, _now: Time) -> Vec<Action> {
        Vec::new()
    }

    /// Period of `on_tick`, if the policy wants ticks.
    fn tick_interval(&self) -> Option<Time> {
        None
    }
}

fn execute_or_drop(state: &ChannelState, txn: &Transaction) -> Vec<Action> {
    let Some(index) = state.position(txn.direction, txn.id) else {
        return Vec::new();
    };
    let mut plan = BatchPlanner::new(state);
    if !plan.execute(txn.direction, index) {
        plan.drop(txn.direction, index);
    }
    plan.finish()
}

fn drop_only(state: &ChannelState, txn: &Transaction) -> Vec<Action> {
    match state.position(txn.direction, txn.id) {
        Some(index) => vec![Action::drop(txn.direction, index)],
        None => Vec::new(),
    }
}

/// Executes on arrival when feasible, otherwise drops. Never buffers.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pfi;

impl Policy for Pfi {
    fn on_arrival(&self, state: &ChannelState, txn: &Transaction) -> Vec<Action> {
        execute_or_drop(state, txn)
    }

    fn on_expiration(&self, state: &ChannelState, txn: &Transaction) -> Vec<Action> {
        drop_only(state, txn)
    }
}

/// Buffers everything; at expiration executes, or first executes the
/// opposite transaction closest to its own deadline and then the expiring
/// one, or drops.
#[derive(Debug, Clone, Copy)]
pub struct Pmde {
    pub buffers: BufferConfig,
}

impl Policy for Pmde {
    fn on_arrival(&self, state: &ChannelState, txn: &Transaction) -> Vec<Action> {
        if self.buffers.has_buffer(txn.direction) {
            Vec::new()
        } else {
            execute_or_drop(state, txn)
        }
    }

    fn on_expiration(&self, state: &ChannelState, txn: &Transaction) -> Vec<Action> {
        let node = txn.direction;
        let Some(index) = state.position(node, txn.id) else {
            return Vec::new();
        };
        let mut plan = BatchPlanner::new(state);
        if plan.execute(node, index) {
            return plan.finish();
        }
        let other = node.opposite();
        let guard = state.balance(other) >= txn.amount && !state.buffer(other).is_empty();
        // The head of the opposite buffer has the least remaining time. With
        // unequal amounts the match can still fall short; then drop.
        if guard && plan.execute(other, 0) && plan.execute(node, index) {
            return plan.finish();
        }
        vec![Action::drop(node, index)]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GeneralizedPmde {
    pub discipline: BufferDiscipline,
    pub buffers: BufferConfig,
}

impl Policy for GeneralizedPmde {
    fn on_arrival(&self, state: &ChannelState, txn: &Transaction) -> Vec<Action> {
        if self.buffers.has_buffer(txn.direction) {
            Vec::new()
        } else {
            execute_or_drop(state, txn)
        }
    }

    fn on_expiration(&self, state: &ChannelState, txn: &Transaction) -> Vec<Action> {
        let node = txn.direction;
        let Some(index) = state.position(node, txn.id) else {
            return Vec::new();
        };
        let mut plan = BatchPlanner::new(state);
        if plan.execute(node, index) {
            return plan.finish();
        }
        let other = node.opposite();
        let opposite = state.buffer(other);
        if state.balance(other) < txn.amount || opposite.is_empty() {
            return vec![Action::drop(node, index)];
        }

        let deficit = txn.amount - state.balance(node);
        let mut order: Vec<usize> = (0..opposite.len()).collect();
        order.sort_by(|&i, &j| self.discipline.compare(&opposite[i], &opposite[j]));
        let mut matched = 0;
        for i in order {
            if plan.execute(other, i) {
                matched += opposite[i].amount();
                if matched >= deficit {
                    break;
                }
            }
        }
        if matched >= deficit && plan.execute(node, index) {
            plan.finish()
        } else {
            vec![Action::drop(node, index)]
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Pri {
    pub discipline: BufferDiscipline,
    pub immediate_processing: bool,
    pub check_interval: Time,
    pub buffers: BufferConfig,
}

impl Policy for Pri {
    fn on_arrival(&self, state: &ChannelState, txn: &Transaction) -> Vec<Action> {
        if !self.buffers.has_buffer(txn.direction) {
            return if self.immediate_processing {
                execute_or_drop(state, txn)
            } else {
                drop_only(state, txn)
            };
        }
        if self.immediate_processing && state.is_feasible(txn) {
            execute_or_drop(state, txn)
        } else {
            Vec::new()
        }
    }

    fn on_expiration(&self, state: &ChannelState, txn: &Transaction) -> Vec<Action> {
        drop_only(state, txn)
    }

    fn on_tick(&self, state: &ChannelState, now: Time) -> Vec<Action> {
        let mut plan = BatchPlanner::new(state);
        let mut live: Vec<(Direction, usize)> = Vec::new();
        for node in Direction::BOTH {
            for (i, entry) in state.buffer(node).iter().enumerate() {
                if entry.expiration_time() < now {
                    plan.drop(node, i);
                } else {
                    live.push((node, i));
                }
            }
        }
        let entry = |&(node, i): &(Direction, usize)| &state.buffer(node)[i];
        if self.buffers == BufferConfig::BothShared {
            live.sort_by(|x, y| self.discipline.compare(entry(x), entry(y)));
        } else {
            // A's buffer first, then B's, each in discipline order
            live.sort_by(|x, y| x.0.cmp(&y.0).then_with(|| self.discipline.compare(entry(x), entry(y))));
        }
        for (node, i) in live {
            plan.execute(node, i);
        }
        plan.finish()
    }

    fn tick_interval(&self) -> Option<Time> {
        Some(self.check_interval)
    }
}
