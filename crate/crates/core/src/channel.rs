//! Single payment channel: the two balances, the two pending-transaction
//! buffers, and the execute/drop transitions.
//!
//! Every transaction admitted to a [`ChannelState`] gets a journal record, so
//! the running totals (arrived, executed, dropped, pending) are available to
//! any policy without extra bookkeeping. The totals satisfy
//! `arrived = executed + dropped + pending` after every mutation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Monetary amount in the smallest denomination.
pub type Amount = u64;

/// Simulation time in seconds.
pub type Time = f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxnId(pub u64);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Direction of a payment, named after its origin node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    AtoB,
    BtoA,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::AtoB, Direction::BtoA];

    pub fn opposite(self) -> Self {
        match self {
            Direction::AtoB => Direction::BtoA,
            Direction::BtoA => Direction::AtoB,
        }
    }

    /// Name of the node the payment leaves from.
    pub fn origin(self) -> &'static str {
        match self {
            Direction::AtoB => "A",
            Direction::BtoA => "B",
        }
    }

    fn slot(self) -> usize {
        match self {
            Direction::AtoB => 0,
            Direction::BtoA => 1,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::AtoB => f.write_str("A->B"),
            Direction::BtoA => f.write_str("B->A"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxnId,
    pub direction: Direction,
    pub arrival_time: Time,
    pub amount: Amount,
    pub max_buffering_time: Time,
}

impl Transaction {
    pub fn new(id: u64, direction: Direction, arrival_time: Time, amount: Amount, max_buffering_time: Time) -> Self {
        Self {
            id: TxnId(id),
            direction,
            arrival_time,
            amount,
            max_buffering_time,
        }
    }

    /// Latest instant at which the transaction may still be executed.
    pub fn expiration_time(&self) -> Time {
        self.arrival_time + self.max_buffering_time
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.amount == 0 {
            return Err(ChannelError::ZeroAmount(self.id));
        }
        let times_ok = self.arrival_time.is_finite()
            && self.arrival_time >= 0.0
            && self.max_buffering_time.is_finite()
            && self.max_buffering_time >= 0.0;
        if !times_ok {
            return Err(ChannelError::InvalidTimes(self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BufferEntry {
    pub transaction: Transaction,
    pub feasible_on_arrival: bool,
}

impl BufferEntry {
    pub fn id(&self) -> TxnId {
        self.transaction.id
    }

    pub fn amount(&self) -> Amount {
        self.transaction.amount
    }

    pub fn expiration_time(&self) -> Time {
        self.transaction.expiration_time()
    }

    pub fn remaining_time(&self, now: Time) -> Time {
        self.expiration_time() - now
    }

    fn buffer_key(&self) -> (Time, TxnId) {
        (self.expiration_time(), self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Execute,
    Drop,
}

/// One execute or drop decision on a buffered transaction.
///
/// `buffer_index` refers to the origin buffer as it stands when the action is
/// applied, i.e. after all earlier actions of the same batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub node: Direction,
    pub buffer_index: usize,
    pub kind: ActionKind,
}

impl Action {
    pub fn execute(node: Direction, buffer_index: usize) -> Self {
        Self {
            node,
            buffer_index,
            kind: ActionKind::Execute,
        }
    }

    pub fn drop(node: Direction, buffer_index: usize) -> Self {
        Self {
            node,
            buffer_index,
            kind: ActionKind::Drop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropCause {
    /// The policy emitted a drop action.
    Policy,
    /// The transaction reached its expiration time still buffered.
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum Outcome {
    Pending,
    Executed {
        at: Time,
    },
    Dropped {
        at: Time,
        cause: DropCause,
    },
    /// Still buffered when the simulation horizon was reached.
    HorizonTruncated {
        at: Time,
    },
}

impl Outcome {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Outcome::Executed { .. } | Outcome::Dropped { .. })
    }

    pub fn time(&self) -> Option<Time> {
        match *self {
            Outcome::Pending => None,
            Outcome::Executed { at } | Outcome::Dropped { at, .. } | Outcome::HorizonTruncated { at } => Some(at),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Pending => "pending",
            Outcome::Executed { .. } => "executed",
            Outcome::Dropped { .. } => "dropped",
            Outcome::HorizonTruncated { .. } => "horizon-truncated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TxnRecord {
    pub transaction: Transaction,
    pub feasible_on_arrival: bool,
    pub outcome: Outcome,
}

impl TxnRecord {
    /// Feasible when it arrived, yet dropped later.
    pub fn is_sacrificed(&self) -> bool {
        self.feasible_on_arrival && matches!(self.outcome, Outcome::Dropped { .. })
    }
}

/// Running amount totals over every admitted transaction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub arrived: Amount,
    pub executed: Amount,
    pub dropped: Amount,
    /// Buffered plus horizon-truncated amount.
    pub pending: Amount,
}

impl Totals {
    pub fn identity_holds(&self) -> bool {
        self.arrived == self.executed + self.dropped + self.pending
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("balance {balance} exceeds capacity {capacity}")]
    BalanceExceedsCapacity { balance: Amount, capacity: Amount },
    #[error("transaction {0} has zero amount")]
    ZeroAmount(TxnId),
    #[error("transaction {0} has a negative or non-finite time")]
    InvalidTimes(TxnId),
    #[error("transaction {0} was already admitted")]
    DuplicateId(TxnId),
    #[error("transaction {id} expires at {expiration} but the clock is at {now}")]
    AlreadyExpired { id: TxnId, expiration: Time, now: Time },
    #[error("no entry at index {index} of node {node} buffer (length {len})", node = .node.origin())]
    NoSuchEntry { node: Direction, index: usize, len: usize },
    #[error("cannot execute {id}: amount {amount} exceeds origin balance {balance}")]
    InfeasibleExecution { id: TxnId, amount: Amount, balance: Amount },
    #[error("clock cannot move from {now} to {to}")]
    TimeReversal { now: Time, to: Time },
    #[error("cannot advance to {to}: buffered {id} expired at {expiration}")]
    StaleEntry { id: TxnId, expiration: Time, to: Time },
}

/// Failure of one action inside a batch; earlier actions remain applied.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("action {position} of batch failed: {source}")]
pub struct BatchError {
    pub position: usize,
    pub source: ChannelError,
}

/// Balances and buffer contents, without the journal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSnapshot {
    pub now: Time,
    pub capacity: Amount,
    pub balance_a: Amount,
    pub balance_b: Amount,
    pub buffer_a: Vec<BufferEntry>,
    pub buffer_b: Vec<BufferEntry>,
}

#[derive(Debug, Clone)]
pub struct ChannelState {
    capacity: Amount,
    balances: [Amount; 2],
    buffers: [Vec<BufferEntry>; 2],
    now: Time,
    journal: BTreeMap<TxnId, TxnRecord>,
    totals: Totals,
}

impl ChannelState {
    /// A channel of `capacity` with `balance_a` on node A's side and the rest on B's.
    pub fn new(capacity: Amount, balance_a: Amount) -> Result<Self, ChannelError> {
        if balance_a > capacity {
            return Err(ChannelError::BalanceExceedsCapacity {
                balance: balance_a,
                capacity,
            });
        }
        Ok(Self {
            capacity,
            balances: [balance_a, capacity - balance_a],
            buffers: [Vec::new(), Vec::new()],
            now: 0.0,
            journal: BTreeMap::new(),
            totals: Totals::default(),
        })
    }

    pub fn capacity(&self) -> Amount {
        self.capacity
    }

    pub fn balance_a(&self) -> Amount {
        self.balances[0]
    }

    pub fn balance_b(&self) -> Amount {
        self.balances[1]
    }

    /// Balance of the node a payment in `direction` is paid from.
    pub fn balance(&self, direction: Direction) -> Amount {
        self.balances[direction.slot()]
    }

    pub fn now(&self) -> Time {
        self.now
    }

    /// Buffer holding transactions originating from `node`, in
    /// (expiration time, id) order.
    pub fn buffer(&self, node: Direction) -> &[BufferEntry] {
        &self.buffers[node.slot()]
    }

    pub fn buffered_len(&self) -> usize {
        self.buffers[0].len() + self.buffers[1].len()
    }

    pub fn buffered_amount(&self) -> Amount {
        self.buffers.iter().flatten().map(BufferEntry::amount).sum()
    }

    pub fn totals(&self) -> Totals {
        self.totals
    }

    pub fn journal(&self) -> &BTreeMap<TxnId, TxnRecord> {
        &self.journal
    }

    pub fn into_journal(self) -> BTreeMap<TxnId, TxnRecord> {
        self.journal
    }

    pub fn record(&self, id: TxnId) -> Option<&TxnRecord> {
        self.journal.get(&id)
    }

    /// Buffer position of a still-buffered transaction.
    pub fn locate(&self, id: TxnId) -> Option<(Direction, usize)> {
        let record = self.journal.get(&id)?;
        let node = record.transaction.direction;
        self.position(node, id).map(|index| (node, index))
    }

    pub fn position(&self, node: Direction, id: TxnId) -> Option<usize> {
        self.buffer(node).iter().position(|e| e.id() == id)
    }

    pub fn is_buffered(&self, id: TxnId) -> bool {
        self.locate(id).is_some()
    }

    pub fn is_feasible(&self, txn: &Transaction) -> bool {
        self.balance(txn.direction) >= txn.amount
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            now: self.now,
            capacity: self.capacity,
            balance_a: self.balances[0],
            balance_b: self.balances[1],
            buffer_a: self.buffers[0].clone(),
            buffer_b: self.buffers[1].clone(),
        }
    }

    /// Moves the clock forward. Refuses to skip past a buffered expiration.
    pub fn advance_to(&mut self, to: Time) -> Result<(), ChannelError> {
        if to < self.now || to.is_nan() {
            return Err(ChannelError::TimeReversal { now: self.now, to });
        }
        for buffer in &self.buffers {
            if let Some(head) = buffer.first() {
                if head.expiration_time() < to {
                    return Err(ChannelError::StaleEntry {
                        id: head.id(),
                        expiration: head.expiration_time(),
                        to,
                    });
                }
            }
        }
        self.now = to;
        Ok(())
    }

    /// Places an arriving transaction in its origin buffer and opens its
    /// journal record. Feasibility on arrival is judged against the current
    /// balances.
    pub fn admit(&mut self, txn: Transaction) -> Result<(), ChannelError> {
        txn.validate()?;
        if self.journal.contains_key(&txn.id) {
            return Err(ChannelError::DuplicateId(txn.id));
        }
        if txn.expiration_time() < self.now {
            return Err(ChannelError::AlreadyExpired {
                id: txn.id,
                expiration: txn.expiration_time(),
                now: self.now,
            });
        }
        let entry = BufferEntry {
            feasible_on_arrival: self.is_feasible(&txn),
            transaction: txn.clone(),
        };
        self.journal.insert(
            txn.id,
            TxnRecord {
                transaction: txn,
                feasible_on_arrival: entry.feasible_on_arrival,
                outcome: Outcome::Pending,
            },
        );
        self.totals.arrived += entry.amount();
        self.totals.pending += entry.amount();
        let buffer = &mut self.buffers[entry.transaction.direction.slot()];
        let key = entry.buffer_key();
        let at = buffer.partition_point(|e| cmp_key(e.buffer_key(), key).is_lt());
        buffer.insert(at, entry);
        Ok(())
    }

    fn entry(&self, node: Direction, index: usize) -> Result<&BufferEntry, ChannelError> {
        let buffer = self.buffer(node);
        buffer.get(index).ok_or(ChannelError::NoSuchEntry {
            node,
            index,
            len: buffer.len(),
        })
    }

    pub fn apply_execute(&mut self, node: Direction, index: usize) -> Result<TxnId, ChannelError> {
        let entry = self.entry(node, index)?;
        let (id, amount) = (entry.id(), entry.amount());
        let balance = self.balance(node);
        if balance < amount {
            return Err(ChannelError::InfeasibleExecution { id, amount, balance });
        }
        self.buffers[node.slot()].remove(index);
        self.balances[node.slot()] -= amount;
        self.balances[node.opposite().slot()] += amount;
        self.totals.executed += amount;
        self.totals.pending -= amount;
        self.set_outcome(id, Outcome::Executed { at: self.now });
        Ok(id)
    }

    pub fn apply_drop(&mut self, node: Direction, index: usize, cause: DropCause) -> Result<TxnId, ChannelError> {
        let entry = self.entry(node, index)?;
        let (id, amount) = (entry.id(), entry.amount());
        self.buffers[node.slot()].remove(index);
        self.totals.dropped += amount;
        self.totals.pending -= amount;
        self.set_outcome(id, Outcome::Dropped { at: self.now, cause });
        Ok(id)
    }

    /// Removes every buffered entry and marks it horizon-truncated. The
    /// amounts stay in the pending total.
    pub fn truncate_all(&mut self) -> Vec<TxnId> {
        let at = self.now;
        let removed: Vec<TxnId> = self
            .buffers
            .iter_mut()
            .flat_map(|b| b.drain(..))
            .map(|e| e.id())
            .collect();
        for id in &removed {
            self.set_outcome(*id, Outcome::HorizonTruncated { at });
        }
        removed
    }

    pub fn apply(&mut self, action: Action) -> Result<TxnId, ChannelError> {
        match action.kind {
            ActionKind::Execute => self.apply_execute(action.node, action.buffer_index),
            ActionKind::Drop => self.apply_drop(action.node, action.buffer_index, DropCause::Policy),
        }
    }

    /// Applies `actions` in order. An empty batch is the idle action.
    pub fn apply_batch(&mut self, actions: &[Action]) -> Result<(), BatchError> {
        for (position, action) in actions.iter().enumerate() {
            self.apply(*action).map_err(|source| BatchError { position, source })?;
        }
        Ok(())
    }

    fn set_outcome(&mut self, id: TxnId, outcome: Outcome) {
        if let Some(record) = self.journal.get_mut(&id) {
            record.outcome = outcome;
        }
    }
}

fn cmp_key(a: (Time, TxnId), b: (Time, TxnId)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Builds a legal action batch against a fixed state.
///
/// Entries are addressed by their index in the state as given; the planner
/// tracks balances as earlier planned actions would change them, and
/// rewrites indices to account for entries removed earlier in the batch.
#[derive(Debug)]
pub struct BatchPlanner<'a> {
    state: &'a ChannelState,
    balances: [Amount; 2],
    removed: [Vec<usize>; 2],
    actions: Vec<Action>,
}

impl<'a> BatchPlanner<'a> {
    pub fn new(state: &'a ChannelState) -> Self {
        Self {
            state,
            balances: state.balances,
            removed: [Vec::new(), Vec::new()],
            actions: Vec::new(),
        }
    }

    pub fn state(&self) -> &ChannelState {
        self.state
    }

    /// Origin balance for `direction` after the actions planned so far.
    pub fn balance(&self, direction: Direction) -> Amount {
        self.balances[direction.slot()]
    }

    pub fn is_removed(&self, node: Direction, index: usize) -> bool {
        self.removed[node.slot()].contains(&index)
    }

    pub fn can_execute(&self, node: Direction, index: usize) -> bool {
        match self.state.buffer(node).get(index) {
            Some(entry) => !self.is_removed(node, index) && entry.amount() <= self.balance(node),
            None => false,
        }
    }

    /// Plans execution of the entry at `index`; returns false (planning
    /// nothing) if the entry is gone or would be infeasible.
    pub fn execute(&mut self, node: Direction, index: usize) -> bool {
        if !self.can_execute(node, index) {
            return false;
        }
        let amount = self.state.buffer(node)[index].amount();
        self.balances[node.slot()] -= amount;
        self.balances[node.opposite().slot()] += amount;
        let action = Action::execute(node, self.shifted(node, index));
        self.removed[node.slot()].push(index);
        self.actions.push(action);
        true
    }

    pub fn drop(&mut self, node: Direction, index: usize) -> bool {
        if index >= self.state.buffer(node).len() || self.is_removed(node, index) {
            return false;
        }
        let action = Action::drop(node, self.shifted(node, index));
        self.removed[node.slot()].push(index);
        self.actions.push(action);
        true
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn finish(self) -> Vec<Action> {
        self.actions
    }

    fn shifted(&self, node: Direction, index: usize) -> usize {
        index - self.removed[node.slot()].iter().filter(|&&r| r < index).count()
    }
}
