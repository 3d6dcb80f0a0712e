//! Exhaustive optimal scheduling for small finite instances.
//!
//! The search covers policies that act only at deadline-expiration instants.
//! At each instant any ordered, sequentially feasible set of pending
//! transactions may be executed; transactions expiring then and not executed
//! are dropped; everything else stays pending. Early drops are never
//! explored since waiting until expiry has the same effect.
//!
//! The search is a forward dynamic program over `(balance of A, resolved
//! set)`, which is all the future depends on.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::channel::{ActionKind, Amount, Direction, Time, Transaction, TxnId};

use super::AnalyticsError;

pub const DEFAULT_MAX_ORACLE_SIZE: usize = 8;
/// Hard limit from the bitmask representation.
const MASK_BITS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Objective {
    MinBlockage,
    MaxThroughput,
    MaxCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduledAction {
    pub time: Time,
    pub id: TxnId,
    pub kind: ActionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    pub objective: Objective,
    /// Optimal objective value: blockage, throughput or executed count.
    pub value: u64,
    /// One schedule achieving `value`.
    pub schedule: Vec<ScheduledAction>,
    pub executed_count: u64,
    pub executed_amount: Amount,
    pub blockage: Amount,
    /// For each expiration instant, the least cumulative blockage any
    /// schedule can have at that instant.
    pub min_blockage_by_instant: Vec<(Time, Amount)>,
}

#[derive(Debug, Clone)]
struct Node {
    blockage: Amount,
    executed: Amount,
    count: u64,
    /// Least blockage over every path reaching this state.
    min_blockage: Amount,
    parent: usize,
    actions: Vec<(usize, ActionKind)>,
}

impl Node {
    fn better_than(&self, other: &Node, objective: Objective) -> bool {
        match objective {
            Objective::MinBlockage => self.blockage < other.blockage,
            Objective::MaxThroughput => self.executed > other.executed,
            Objective::MaxCount => self.count > other.count,
        }
    }

    fn value(&self, objective: Objective) -> u64 {
        match objective {
            Objective::MinBlockage => self.blockage,
            Objective::MaxThroughput => self.executed,
            Objective::MaxCount => self.count,
        }
    }
}

type Key = (Amount, u32);

struct Layer {
    index: BTreeMap<Key, usize>,
    nodes: Vec<Node>,
}

impl Layer {
    fn new() -> Self {
        Self {
            index: BTreeMap::new(),
            nodes: Vec::new(),
        }
    }

    fn offer(&mut self, key: Key, node: Node, objective: Objective) {
        match self.index.get(&key) {
            Some(&at) => {
                let kept = &mut self.nodes[at];
                let min_blockage = kept.min_blockage.min(node.min_blockage);
                if node.better_than(kept, objective) {
                    *kept = node;
                }
                kept.min_blockage = min_blockage;
            }
            None => {
                self.index.insert(key, self.nodes.len());
                self.nodes.push(node);
            }
        }
    }
}

/// Every set of `candidates` executable in some order from `balance_a`,
/// each with the first order found (indices tried ascending).
fn executable_sets(
    txns: &[Transaction],
    capacity: Amount,
    balance_a: Amount,
    candidates: &[usize],
) -> Vec<(u32, Amount, Vec<usize>)> {
    #[allow(clippy::too_many_arguments)]
    fn walk(
        txns: &[Transaction],
        capacity: Amount,
        candidates: &[usize],
        balance_a: Amount,
        set: u32,
        order: &mut Vec<usize>,
        seen: &mut BTreeSet<u32>,
        out: &mut Vec<(u32, Amount, Vec<usize>)>,
    ) {
        out.push((set, balance_a, order.clone()));
        for &i in candidates {
            let bit = 1u32 << i;
            if set & bit != 0 || seen.contains(&(set | bit)) {
                continue;
            }
            let t = &txns[i];
            let next = match t.direction {
                Direction::AtoB if balance_a >= t.amount => balance_a - t.amount,
                Direction::BtoA if capacity - balance_a >= t.amount => balance_a + t.amount,
                _ => continue,
            };
            seen.insert(set | bit);
            order.push(i);
            walk(txns, capacity, candidates, next, set | bit, order, seen, out);
            order.pop();
        }
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    seen.insert(0);
    walk(
        txns,
        capacity,
        candidates,
        balance_a,
        0,
        &mut Vec::new(),
        &mut seen,
        &mut out,
    );
    out
}

/// Optimum of `objective` over all expiration-instant schedules of
/// `instance`, starting from `balance_a` on A's side of a `capacity` channel.
pub fn oracle_optimal(
    instance: &[Transaction],
    capacity: Amount,
    balance_a: Amount,
    objective: Objective,
    max_size: usize,
) -> Result<OracleSolution, AnalyticsError> {
    let limit = max_size.min(MASK_BITS);
    if instance.len() > limit {
        return Err(AnalyticsError::InstanceTooLarge {
            size: instance.len(),
            max: limit,
        });
    }
    if balance_a > capacity {
        return Err(AnalyticsError::InvalidParameters(format!(
            "balance {balance_a} exceeds capacity {capacity}"
        )));
    }
    for t in instance {
        t.validate()
            .map_err(|e| AnalyticsError::InvalidParameters(e.to_string()))?;
    }

    let mut instants: Vec<Time> = instance.iter().map(Transaction::expiration_time).collect();
    instants.sort_by(f64::total_cmp);
    instants.dedup();

    let root = Node {
        blockage: 0,
        executed: 0,
        count: 0,
        min_blockage: 0,
        parent: usize::MAX,
        actions: Vec::new(),
    };
    let mut layers = vec![Layer::new()];
    layers[0].offer((balance_a, 0), root, objective);
    let mut min_blockage_by_instant = Vec::with_capacity(instants.len());

    for &now in &instants {
        let prev = layers.last().expect("root layer");
        let mut next = Layer::new();
        for (&(bal, done), &at) in &prev.index {
            let node = &prev.nodes[at];
            let pending: Vec<usize> = (0..instance.len())
                .filter(|&i| done & (1 << i) == 0 && instance[i].arrival_time <= now)
                .collect();
            let expiring: Vec<usize> = pending
                .iter()
                .copied()
                .filter(|&i| instance[i].expiration_time() == now)
                .collect();
            for (set, new_bal, order) in executable_sets(instance, capacity, bal, &pending) {
                let dropped: Vec<usize> = expiring.iter().copied().filter(|&i| set & (1 << i) == 0).collect();
                let drop_mask = dropped.iter().fold(0u32, |m, &i| m | (1 << i));
                let drop_amount: Amount = dropped.iter().map(|&i| instance[i].amount).sum();
                let exec_amount: Amount = order.iter().map(|&i| instance[i].amount).sum();
                let mut actions: Vec<(usize, ActionKind)> = order.iter().map(|&i| (i, ActionKind::Execute)).collect();
                actions.extend(dropped.iter().map(|&i| (i, ActionKind::Drop)));
                let child = Node {
                    blockage: node.blockage + drop_amount,
                    executed: node.executed + exec_amount,
                    count: node.count + order.len() as u64,
                    min_blockage: node.min_blockage + drop_amount,
                    parent: at,
                    actions,
                };
                next.offer((new_bal, done | set | drop_mask), child, objective);
            }
        }
        let least = next.nodes.iter().map(|n| n.min_blockage).min().unwrap_or(0);
        min_blockage_by_instant.push((now, least));
        layers.push(next);
    }

    let last = layers.last().expect("at least the root layer");
    let mut best = 0;
    for (i, node) in last.nodes.iter().enumerate() {
        if node.better_than(&last.nodes[best], objective) {
            best = i;
        }
    }
    let winner = last.nodes[best].clone();

    let mut schedule = Vec::new();
    let mut at = best;
    for depth in (1..layers.len()).rev() {
        let node = &layers[depth].nodes[at];
        let time = instants[depth - 1];
        for &(i, kind) in node.actions.iter().rev() {
            schedule.push(ScheduledAction {
                time,
                id: instance[i].id,
                kind,
            });
        }
        at = node.parent;
    }
    schedule.reverse();

    Ok(OracleSolution {
        objective,
        value: winner.value(objective),
        schedule,
        executed_count: winner.count,
        executed_amount: winner.executed,
        blockage: winner.blockage,
        min_blockage_by_instant,
    })
}
