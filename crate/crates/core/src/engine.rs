//! Deterministic discrete-event loop driving a policy over a workload.
//!
//! Events pop in ascending `(time, kind priority, sequence)` order with
//! `Arrival < PolicyTick < Expiration` at equal times, so a zero-deadline
//! transaction is buffered (and offered to the policy) before it expires,
//! and a tick coinciding with an expiration runs before the forced drop.
//! Simultaneous expirations pop in ascending transaction id.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::channel::{
    Action, Amount, BatchError, ChannelError, ChannelState, Direction, DropCause, StateSnapshot, Time, Totals,
    Transaction, TxnId, TxnRecord,
};
use crate::policy::{Policy, PolicyError, PolicySpec};

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Arrival(Transaction),
    PolicyTick,
    Expiration(TxnId),
}

impl EventKind {
    fn priority(&self) -> u8 {
        match self {
            EventKind::Arrival(_) => 0,
            EventKind::PolicyTick => 1,
            EventKind::Expiration(_) => 2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            EventKind::Arrival(_) => "arrival",
            EventKind::PolicyTick => "tick",
            EventKind::Expiration(_) => "expiration",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: Time,
    pub kind: EventKind,
    pub sequence: u64,
}

impl Event {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.priority().cmp(&other.kind.priority()))
            .then(self.sequence.cmp(&other.sequence))
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other).is_eq()
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Min-queue of events with monotone sequence numbers.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_sequence: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: Time, kind: EventKind) {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Reverse(Event { time, kind, sequence }));
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn peek_time(&self) -> Option<Time> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub capacity: Amount,
    pub initial_balance_a: Amount,
    /// Events after this instant are not processed; `f64::INFINITY` runs
    /// until every transaction is resolved.
    pub horizon: Time,
    /// Keep per-event snapshots and the replayable action trace.
    pub record_trace: bool,
}

impl EngineConfig {
    pub fn new(capacity: Amount, initial_balance_a: Amount) -> Self {
        Self {
            capacity,
            initial_balance_a,
            horizon: f64::INFINITY,
            record_trace: false,
        }
    }

    pub fn with_horizon(mut self, horizon: Time) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn traced(mut self) -> Self {
        self.record_trace = true;
        self
    }
}

/// One step of the replayable trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TraceStep {
    Advance(Time),
    Admit(Transaction),
    Apply(Action),
    Expire { node: Direction, index: usize },
    Truncate,
}

/// State after each dispatched event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventSnapshot {
    pub index: u64,
    pub time: Time,
    pub kind: &'static str,
    pub balance_a: Amount,
    pub balance_b: Amount,
    pub totals: Totals,
    pub buffered_amount: Amount,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// One record per transaction, ascending id.
    pub journal: Vec<TxnRecord>,
    pub final_state: StateSnapshot,
    pub event_count: u64,
    pub last_event_time: Time,
    pub wall_clock: Duration,
    pub trace: Vec<TraceStep>,
    pub snapshots: Vec<EventSnapshot>,
}

impl RunResult {
    pub fn executed_amount(&self) -> Amount {
        self.journal
            .iter()
            .filter(|r| matches!(r.outcome, crate::channel::Outcome::Executed { .. }))
            .map(|r| r.transaction.amount)
            .sum()
    }

    pub fn executed_count(&self) -> usize {
        self.journal
            .iter()
            .filter(|r| matches!(r.outcome, crate::channel::Outcome::Executed { .. }))
            .count()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("initial state: {0}")]
    Setup(ChannelError),
    #[error("workload transaction {id}: {source}")]
    Workload { id: TxnId, source: ChannelError },
    #[error("transaction {id} arrives at {arrival}, after the horizon {horizon}")]
    OutsideHorizon { id: TxnId, arrival: Time, horizon: Time },
    #[error("event {event_index} ({kind}) at t={time}: {source}")]
    Channel {
        event_index: u64,
        kind: &'static str,
        time: Time,
        source: BatchError,
        snapshot: Box<StateSnapshot>,
    },
    #[error("event {event_index} at t={time}: {source}")]
    Clock {
        event_index: u64,
        time: Time,
        source: ChannelError,
    },
    #[error("event {event_index} at t={time}: policy left {id} buffered at node {node} which has no buffer", node = .node.origin())]
    Unbuffered {
        event_index: u64,
        time: Time,
        id: TxnId,
        node: Direction,
    },
    #[error("event {event_index} at t={time}: ledger invariant broken ({totals:?}, balances {balance_a}+{balance_b})")]
    Invariant {
        event_index: u64,
        time: Time,
        totals: Totals,
        balance_a: Amount,
        balance_b: Amount,
    },
}

struct Run<'a> {
    config: &'a EngineConfig,
    policy: Box<dyn Policy>,
    spec: &'a PolicySpec,
    state: ChannelState,
    trace: Vec<TraceStep>,
    snapshots: Vec<EventSnapshot>,
    event_index: u64,
}

impl Run<'_> {
    fn apply(&mut self, kind: &'static str, actions: &[Action]) -> Result<(), EngineError> {
        let result = self.state.apply_batch(actions);
        if self.config.record_trace {
            let applied = match &result {
                Ok(()) => actions.len(),
                Err(e) => e.position,
            };
            self.trace
                .extend(actions[..applied].iter().copied().map(TraceStep::Apply));
        }
        result.map_err(|source| EngineError::Channel {
            event_index: self.event_index,
            kind,
            time: self.state.now(),
            source,
            snapshot: Box::new(self.state.snapshot()),
        })
    }

    fn dispatch(&mut self, event: Event, queue: &mut EventQueue, tick_count: &mut u64) -> Result<(), EngineError> {
        let label = event.kind.label();
        self.state.advance_to(event.time).map_err(|source| EngineError::Clock {
            event_index: self.event_index,
            time: event.time,
            source,
        })?;
        if self.config.record_trace {
            self.trace.push(TraceStep::Advance(event.time));
        }
        match event.kind {
            EventKind::Arrival(txn) => {
                self.state
                    .admit(txn.clone())
                    .map_err(|source| EngineError::Workload { id: txn.id, source })?;
                if self.config.record_trace {
                    self.trace.push(TraceStep::Admit(txn.clone()));
                }
                let actions = self.policy.on_arrival(&self.state, &txn);
                self.apply(label, &actions)?;
                let node = txn.direction;
                if !self.spec.buffer_config.has_buffer(node) && self.state.is_buffered(txn.id) {
                    return Err(EngineError::Unbuffered {
                        event_index: self.event_index,
                        time: event.time,
                        id: txn.id,
                        node,
                    });
                }
            }
            EventKind::Expiration(id) => {
                if self.state.is_buffered(id) {
                    let txn = self
                        .state
                        .record(id)
                        .map(|r| r.transaction.clone())
                        .expect("buffered transaction has a journal record");
                    let actions = self.policy.on_expiration(&self.state, &txn);
                    self.apply(label, &actions)?;
                    if let Some((node, index)) = self.state.locate(id) {
                        self.state
                            .apply_drop(node, index, DropCause::Expired)
                            .expect("located entry exists");
                        if self.config.record_trace {
                            self.trace.push(TraceStep::Expire { node, index });
                        }
                    }
                }
            }
            EventKind::PolicyTick => {
                let actions = self.policy.on_tick(&self.state, event.time);
                self.apply(label, &actions)?;
                if !queue.is_empty() {
                    if let Some(interval) = self.policy.tick_interval() {
                        *tick_count += 1;
                        queue.push(interval * (*tick_count + 1) as f64, EventKind::PolicyTick);
                    }
                }
            }
        }

        let totals = self.state.totals();
        let (qa, qb) = (self.state.balance_a(), self.state.balance_b());
        if !totals.identity_holds() || qa + qb != self.state.capacity() {
            return Err(EngineError::Invariant {
                event_index: self.event_index,
                time: event.time,
                totals,
                balance_a: qa,
                balance_b: qb,
            });
        }
        if self.config.record_trace {
            self.snapshots.push(EventSnapshot {
                index: self.event_index,
                time: event.time,
                kind: label,
                balance_a: qa,
                balance_b: qb,
                totals,
                buffered_amount: self.state.buffered_amount(),
            });
        }
        self.event_index += 1;
        Ok(())
    }
}

/// Simulates `workload` under the policy described by `spec`.
pub fn run(config: &EngineConfig, spec: &PolicySpec, workload: &[Transaction]) -> Result<RunResult, EngineError> {
    let started = Instant::now();
    let policy = spec.build()?;
    let state = ChannelState::new(config.capacity, config.initial_balance_a).map_err(EngineError::Setup)?;

    for txn in workload {
        txn.validate()
            .map_err(|source| EngineError::Workload { id: txn.id, source })?;
        if txn.arrival_time > config.horizon {
            return Err(EngineError::OutsideHorizon {
                id: txn.id,
                arrival: txn.arrival_time,
                horizon: config.horizon,
            });
        }
    }

    let mut queue = EventQueue::default();
    let mut arrivals: Vec<&Transaction> = workload.iter().collect();
    arrivals.sort_by(|x, y| x.arrival_time.total_cmp(&y.arrival_time).then(x.id.cmp(&y.id)));
    for txn in &arrivals {
        queue.push(txn.arrival_time, EventKind::Arrival((*txn).clone()));
    }
    arrivals.sort_by_key(|t| t.id);
    for txn in &arrivals {
        queue.push(txn.expiration_time(), EventKind::Expiration(txn.id));
    }
    let mut tick_count = 0u64;
    if let Some(interval) = policy.tick_interval() {
        if !workload.is_empty() {
            queue.push(interval, EventKind::PolicyTick);
        }
    }

    let mut run = Run {
        config,
        policy,
        spec,
        state,
        trace: Vec::new(),
        snapshots: Vec::new(),
        event_index: 0,
    };
    let mut last_event_time = 0.0;
    while let Some(event) = queue.pop() {
        if event.time > config.horizon {
            break;
        }
        last_event_time = event.time;
        run.dispatch(event, &mut queue, &mut tick_count)?;
    }

    if run.state.buffered_len() > 0 {
        // only reachable with a finite horizon: everything up to it was dispatched
        let time = config.horizon;
        run.state.advance_to(time).map_err(|source| EngineError::Clock {
            event_index: run.event_index,
            time,
            source,
        })?;
        run.state.truncate_all();
        if config.record_trace {
            run.trace.push(TraceStep::Advance(time));
            run.trace.push(TraceStep::Truncate);
        }
    }

    let final_state = run.state.snapshot();
    Ok(RunResult {
        journal: run.state.into_journal().into_values().collect(),
        final_state,
        event_count: run.event_index,
        last_event_time,
        wall_clock: started.elapsed(),
        trace: run.trace,
        snapshots: run.snapshots,
    })
}

/// Rebuilds channel state from a recorded trace.
pub fn replay(capacity: Amount, initial_balance_a: Amount, trace: &[TraceStep]) -> Result<ChannelState, ChannelError> {
    let mut state = ChannelState::new(capacity, initial_balance_a)?;
    for step in trace {
        match step {
            TraceStep::Advance(t) => state.advance_to(*t)?,
            TraceStep::Admit(txn) => state.admit(txn.clone())?,
            TraceStep::Apply(action) => {
                state.apply(*action)?;
            }
            TraceStep::Expire { node, index } => {
                state.apply_drop(*node, *index, DropCause::Expired)?;
            }
            TraceStep::Truncate => {
                state.truncate_all();
            }
        }
    }
    Ok(state)
}
