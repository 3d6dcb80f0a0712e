//! Hard-coded worked examples with known outcomes.

use std::fmt::Write as _;

use thiserror::Error;

use crate::analytics::{compute_metrics, oracle_optimal, AnalyticsError, MetricsLedger, Objective, OracleSolution};
use crate::channel::{ActionKind, Amount, ChannelError, ChannelState, Direction, DropCause, Time, Transaction};
use crate::engine::{run, EngineConfig, EngineError, RunResult, TraceStep};
use crate::policy::{BufferDiscipline, PolicyKind, PolicySpec, DEFAULT_CHECK_INTERVAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// C=20, Q^A(0)=7: A sends 9 (deadline 3) and 2 (deadline 5) at t=0,
    /// B sends 2 at t=1 and t=4 without buffering.
    Fig3,
    /// C=10, Q^A(0)=10: A sends 9 then five payments of 2, none buffered.
    Counterexample,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Fig3 => "fig3",
            Scenario::Counterexample => "counterexample",
        }
    }

    pub fn capacity(self) -> Amount {
        match self {
            Scenario::Fig3 => 20,
            Scenario::Counterexample => 10,
        }
    }

    pub fn initial_balance_a(self) -> Amount {
        match self {
            Scenario::Fig3 => 7,
            Scenario::Counterexample => 10,
        }
    }

    pub fn default_policy(self) -> PolicySpec {
        match self {
            Scenario::Fig3 => PolicySpec::pmde(),
            Scenario::Counterexample => PolicySpec::pfi(),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig3" => Ok(Scenario::Fig3),
            "counterexample" => Ok(Scenario::Counterexample),
            other => Err(ScenarioError::UnknownScenario(other.to_owned())),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?} (expected fig3 or counterexample)")]
    UnknownScenario(String),
    #[error("unknown policy {0:?} (expected pfi, pmde, gpmde, pri-ip or pri-nip)")]
    UnknownPolicy(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("trace replay: {0}")]
    Replay(#[from] ChannelError),
}

/// Short policy names accepted on the command line.
pub fn policy_by_name(name: &str) -> Result<PolicySpec, ScenarioError> {
    let d = BufferDiscipline::default();
    Ok(match name {
        "pfi" => PolicySpec::pfi(),
        "pmde" => PolicySpec::pmde(),
        "gpmde" | "generalized-pmde" => PolicySpec::generalized_pmde(d),
        "pri-ip" => PolicySpec::pri(d, true, DEFAULT_CHECK_INTERVAL),
        "pri-nip" => PolicySpec::pri(d, false, DEFAULT_CHECK_INTERVAL),
        other => return Err(ScenarioError::UnknownPolicy(other.to_owned())),
    })
}

fn txn(id: u64, direction: Direction, at: Time, amount: Amount, deadline: Time) -> Transaction {
    Transaction::new(id, direction, at, amount, deadline)
}

/// The `fig3` workload; `zero_deadlines` removes all buffering.
pub fn fig3_workload(zero_deadlines: bool) -> Vec<Transaction> {
    let d = |x: Time| if zero_deadlines { 0.0 } else { x };
    vec![
        txn(0, Direction::AtoB, 0.0, 9, d(3.0)),
        txn(1, Direction::AtoB, 0.0, 2, d(5.0)),
        txn(2, Direction::BtoA, 1.0, 2, 0.0),
        txn(3, Direction::BtoA, 4.0, 2, 0.0),
    ]
}

pub fn counterexample_workload() -> Vec<Transaction> {
    let mut w = vec![txn(0, Direction::AtoB, 0.0, 9, 0.0)];
    w.extend((1..6).map(|i| txn(i, Direction::AtoB, i as Time, 2, 0.0)));
    w
}

/// Reference outcome a scenario run is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Expected {
    pub executed: u64,
    pub arrived: u64,
    pub throughput: Amount,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub policy: PolicySpec,
    pub workload: Vec<Transaction>,
    pub result: RunResult,
    pub metrics: MetricsLedger,
    pub expected: Option<Expected>,
    /// Best achievable throughput and count over every feasible schedule.
    pub optimum_throughput: OracleSolution,
    pub optimum_count: OracleSolution,
    pub expected_optimum: Option<Expected>,
    pub trace: Vec<String>,
}

impl ScenarioReport {
    pub fn observed(&self) -> Expected {
        Expected {
            executed: self.metrics.total.executed_count,
            arrived: self.metrics.total.arrived_count,
            throughput: self.metrics.throughput(),
        }
    }

    /// The run matched its reference values (trivially true without any).
    pub fn reproduced(&self) -> bool {
        let run_ok = self.expected.is_none_or(|e| e == self.observed());
        let oracle_ok = self
            .expected_optimum
            .is_none_or(|e| e.throughput == self.optimum_throughput.value && e.executed == self.optimum_count.value);
        run_ok && oracle_ok
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario {} with {} (C={}, Q^A(0)={})",
            self.scenario.name(),
            self.policy.id(),
            self.scenario.capacity(),
            self.scenario.initial_balance_a()
        );
        for line in &self.trace {
            let _ = writeln!(out, "  {line}");
        }
        let m = &self.metrics;
        let _ = writeln!(
            out,
            "success {}/{}  throughput {}  dropped {}  sacrificed {}",
            m.total.executed_count,
            m.total.arrived_count,
            m.throughput(),
            m.total.dropped_count,
            m.total.sacrificed_count
        );
        let _ = writeln!(
            out,
            "optimum: throughput {} ({} executed), count {}",
            self.optimum_throughput.value, self.optimum_throughput.executed_count, self.optimum_count.value
        );
        match self.expected {
            Some(e) => {
                let verdict = if self.reproduced() { "reproduced" } else { "MISMATCH" };
                let _ = writeln!(
                    out,
                    "expected {}/{} throughput {}: {verdict}",
                    e.executed, e.arrived, e.throughput
                );
            }
            None => {
                let _ = writeln!(out, "no reference values for this policy");
            }
        }
        out
    }
}

fn expected_for(scenario: Scenario, policy: &PolicySpec) -> Option<Expected> {
    let matching = matches!(policy.kind, PolicyKind::Pmde | PolicyKind::GeneralizedPmde);
    match (scenario, policy.kind) {
        (Scenario::Fig3, _) if matching => Some(Expected {
            executed: 4,
            arrived: 4,
            throughput: 15,
        }),
        (Scenario::Fig3, PolicyKind::Pfi) => Some(Expected {
            executed: 3,
            arrived: 4,
            throughput: 6,
        }),
        (Scenario::Counterexample, PolicyKind::Pfi) => Some(Expected {
            executed: 1,
            arrived: 6,
            throughput: 9,
        }),
        (Scenario::Counterexample, _) if matching => Some(Expected {
            executed: 1,
            arrived: 6,
            throughput: 9,
        }),
        _ => None,
    }
}

/// Renders a trace as one line per state change, naming transactions by id.
pub fn describe_trace(
    capacity: Amount,
    initial_balance_a: Amount,
    trace: &[TraceStep],
) -> Result<Vec<String>, ChannelError> {
    let mut state = ChannelState::new(capacity, initial_balance_a)?;
    let mut lines = Vec::new();
    for step in trace {
        match step {
            TraceStep::Advance(t) => {
                if *t != state.now() || lines.is_empty() {
                    lines.push(format!("t={t}"));
                }
                state.advance_to(*t)?;
            }
            TraceStep::Admit(t) => {
                let feasible = if state.is_feasible(t) { "feasible" } else { "infeasible" };
                lines.push(format!(
                    "  arrive {} {} amount {} deadline {} ({feasible})",
                    t.id, t.direction, t.amount, t.max_buffering_time
                ));
                state.admit(t.clone())?;
            }
            TraceStep::Apply(action) => {
                let id = state.buffer(action.node)[action.buffer_index].id();
                state.apply(*action)?;
                let verb = match action.kind {
                    ActionKind::Execute => "execute",
                    ActionKind::Drop => "drop",
                };
                lines.push(format!(
                    "  {verb} {id}  balances {}/{}",
                    state.balance_a(),
                    state.balance_b()
                ));
            }
            TraceStep::Expire { node, index } => {
                let id = state.buffer(*node)[*index].id();
                state.apply_drop(*node, *index, DropCause::Expired)?;
                lines.push(format!("  expire {id}"));
            }
            TraceStep::Truncate => {
                let left = state.truncate_all();
                lines.push(format!("  horizon reached, {} still buffered", left.len()));
            }
        }
    }
    Ok(lines)
}

/// Runs a scenario under `policy` (or the scenario's default). PFI on Fig3
/// uses the zero-deadline variant of the workload.
pub fn run_scenario(scenario: Scenario, policy: Option<PolicySpec>) -> Result<ScenarioReport, ScenarioError> {
    let policy = policy.unwrap_or_else(|| scenario.default_policy());
    let workload = match scenario {
        Scenario::Fig3 => fig3_workload(policy.kind == PolicyKind::Pfi),
        Scenario::Counterexample => counterexample_workload(),
    };
    let (capacity, balance_a) = (scenario.capacity(), scenario.initial_balance_a());
    let result = run(&EngineConfig::new(capacity, balance_a).traced(), &policy, &workload)?;
    let metrics = compute_metrics(&result, 1.0)?;
    let optimum_throughput = oracle_optimal(&workload, capacity, balance_a, Objective::MaxThroughput, workload.len())?;
    let optimum_count = oracle_optimal(&workload, capacity, balance_a, Objective::MaxCount, workload.len())?;
    let expected_optimum = match scenario {
        Scenario::Counterexample => Some(Expected {
            executed: 5,
            arrived: 6,
            throughput: 10,
        }),
        Scenario::Fig3 if policy.kind != PolicyKind::Pfi => Some(Expected {
            executed: 4,
            arrived: 4,
            throughput: 15,
        }),
        Scenario::Fig3 => None,
    };
    let trace = describe_trace(capacity, balance_a, &result.trace)?;
    Ok(ScenarioReport {
        scenario,
        expected: expected_for(scenario, &policy),
        policy,
        workload,
        result,
        metrics,
        optimum_throughput,
        optimum_count,
        expected_optimum,
        trace,
    })
}
