//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pcn_core::analytics::{
    analytical_success_rate, compute_metrics, oracle_optimal, stationary_distribution_closed_form,
    stationary_distribution_numeric, Objective,
};
use pcn_core::channel::{Amount, Direction, Outcome, Time, Transaction, TxnId};
use pcn_core::engine::{replay, run, EngineConfig, RunResult, TraceStep};
use pcn_core::experiment::{
    counterexample_workload, execute, fig3_workload, run_scenario, ExperimentConfig, RunOptions, Scenario,
};
use pcn_core::policy::{BufferDiscipline, PolicyKind, PolicySpec, DEFAULT_CHECK_INTERVAL};
use pcn_core::workload::{generate, AmountDist, DeadlineDist, DemandSpec, SideDemand, Stop};

type Check = Result<String, String>;
type Criterion = Box<dyn FnOnce(&mut Runs) -> Check>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// A finished run kept for the invariant suite, with what is needed to rerun it.
struct Recorded {
    label: String,
    capacity: Amount,
    balance_a: Amount,
    policy: PolicySpec,
    workload: Vec<Transaction>,
    result: RunResult,
}

#[derive(Default)]
struct Runs(Vec<Recorded>);

impl Runs {
    fn run(
        &mut self,
        label: impl Into<String>,
        capacity: Amount,
        balance_a: Amount,
        policy: &PolicySpec,
        workload: Vec<Transaction>,
    ) -> Result<&RunResult, String> {
        let label = label.into();
        let result = run(&EngineConfig::new(capacity, balance_a).traced(), policy, &workload)
            .map_err(|e| format!("{label}: {e}"))?;
        self.0.push(Recorded {
            label,
            capacity,
            balance_a,
            policy: *policy,
            workload,
            result,
        });
        Ok(&self.0.last().unwrap().result)
    }
}

fn pri_ip() -> PolicySpec {
    PolicySpec::pri(BufferDiscipline::OldestFirst, true, DEFAULT_CHECK_INTERVAL)
}

fn criterion_1(runs: &mut Runs) -> Check {
    let pmde = runs.run("fig3/pmde", 20, 7, &PolicySpec::pmde(), fig3_workload(false))?;
    let (n, s) = (pmde.executed_count(), pmde.executed_amount());
    ensure(n == 4 && s == 15, || format!("PMDE gave {n}/4 and throughput {s}"))?;
    let pfi = runs.run("fig3/pfi", 20, 7, &PolicySpec::pfi(), fig3_workload(true))?;
    let (m, t) = (pfi.executed_count(), pfi.executed_amount());
    ensure(m == 3 && t == 6, || format!("PFI gave {m}/4 and throughput {t}"))?;
    let report = run_scenario(Scenario::Fig3, None).map_err(|e| e.to_string())?;
    ensure(report.reproduced(), || "scenario runner reports a mismatch".into())?;
    runs.run("fig3/pri-ip", 20, 7, &pri_ip(), fig3_workload(false))?;
    Ok(format!("PMDE {n}/4 throughput {s}; PFI {m}/4 throughput {t}"))
}

fn criterion_2(runs: &mut Runs) -> Check {
    let w = counterexample_workload();
    let pfi = runs.run("counterexample/pfi", 10, 10, &PolicySpec::pfi(), w.clone())?;
    let (n, s) = (pfi.executed_count(), pfi.executed_amount());
    ensure(n == 1 && s == 9, || format!("PFI gave {n}/6 and throughput {s}"))?;
    let best = oracle_optimal(&w, 10, 10, Objective::MaxThroughput, 8).map_err(|e| e.to_string())?;
    ensure(best.value == 10 && best.executed_count == 5, || {
        format!("oracle gave throughput {} with {}/6", best.value, best.executed_count)
    })?;
    let pmde = runs.run("counterexample/pmde", 10, 10, &PolicySpec::pmde(), w.clone())?;
    let p = pmde.executed_amount();
    ensure(p == 9, || format!("PMDE throughput {p}, expected 9"))?;
    runs.run("counterexample/pri-ip", 10, 10, &pri_ip(), w)?;
    Ok(format!(
        "PFI {n}/6 throughput {s}, PMDE throughput {p}; optimum {}/6 throughput {}",
        best.executed_count, best.value
    ))
}

fn poisson_side(rate: f64, duration: Time, amount: Amount) -> SideDemand {
    SideDemand {
        rate,
        stop: Stop::Duration(duration),
        amount: AmountDist::Fixed(amount),
        deadline: DeadlineDist::Constant { value: 0.0 },
    }
}

fn criterion_3(runs: &mut Runs) -> Check {
    const DURATION: Time = 66_000.0;
    let mut summary = Vec::new();
    for (label, la, lb) in [("symmetric", 1.0 / 3.0, 1.0 / 3.0), ("asymmetric", 0.5, 1.0 / 3.0)] {
        let model = analytical_success_rate(300, 50, la, lb).map_err(|e| e.to_string())?;
        let pi_numeric = stationary_distribution_numeric(6, la, lb).map_err(|e| e.to_string())?;
        let cross = model
            .stationary
            .iter()
            .zip(&pi_numeric)
            .all(|(p, q)| (p - q).abs() < 1e-12);
        ensure(cross, || format!("{label}: closed form and recursion disagree"))?;
        let expected = model.success_fraction();
        let demand = DemandSpec {
            a: poisson_side(la, DURATION, 50),
            b: poisson_side(lb, DURATION, 50),
        };
        let mut fractions = Vec::new();
        for seed in 0..5u64 {
            let w = generate(&demand, seed, 300).map_err(|e| e.to_string())?;
            for dir in Direction::BOTH {
                let n = w.iter().filter(|t| t.direction == dir).count();
                ensure(n >= 20_000, || {
                    format!("{label} seed {seed}: only {n} transactions from {}", dir.origin())
                })?;
            }
            let result = runs.run(format!("theorem2/{label}/{seed}"), 300, 0, &PolicySpec::pfi(), w)?;
            let m = compute_metrics(result, 0.8).map_err(|e| e.to_string())?;
            fractions.push(m.success_rate());
        }
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        let rel = (mean - expected).abs() / expected;
        ensure(rel <= 0.02, || {
            format!(
                "{label}: mean success fraction {mean:.5} vs {expected:.5} ({:.2}% off)",
                rel * 100.0
            )
        })?;
        summary.push(format!("{label} {mean:.4} vs {expected:.4}"));
    }
    Ok(summary.join("; "))
}

fn criterion_4() -> Check {
    #[rustfmt::skip]
    let ratios = [
        0.05, 0.1, 0.2, 0.5, 2.0 / 3.0, 0.9, 0.999, 1.0, 1.0 + 1e-10, 1.001, 1.1, 1.5, 2.0, 5.0, 10.0, 20.0,
    ];
    let sizes: Vec<u64> = (1..=20).chain([50, 100]).collect();
    let mut worst = 0.0f64;
    for &r in &ratios {
        for &n in &sizes {
            let (la, lb) = (0.4, 0.4 * r);
            let closed = stationary_distribution_closed_form(n, la, lb).map_err(|e| e.to_string())?;
            let numeric = stationary_distribution_numeric(n, la, lb).map_err(|e| e.to_string())?;
            for (p, q) in closed.iter().zip(&numeric) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    for &n in &sizes {
        for lambda in [0.1, 1.0 / 3.0, 2.5] {
            let pi = stationary_distribution_closed_form(n, lambda, lambda).map_err(|e| e.to_string())?;
            let u = 1.0 / (n as f64 + 1.0);
            ensure(pi.len() == n as usize + 1 && pi.iter().all(|&p| p == u), || {
                format!("equal rates, C̃={n}: not exactly uniform")
            })?;
        }
    }
    Ok(format!(
        "{} grid points, max deviation {worst:.1e}; equal rates exactly uniform",
        ratios.len() * sizes.len()
    ))
}

fn random_instance(rng: &mut ChaCha8Rng, zero_deadlines: bool) -> (Amount, Amount, Vec<Transaction>) {
    let v: Amount = rng.random_range(1..=4);
    let capacity = v * rng.random_range(1..=4) + rng.random_range(0..v);
    let balance_a = loop {
        let q = rng.random_range(0..=capacity);
        if q >= v || capacity - q >= v {
            break q;
        }
    };
    let n = rng.random_range(1..=7);
    let mut times: Vec<Time> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    times.sort_by(f64::total_cmp);
    let txns = times
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let dir = if rng.random_bool(0.5) {
                Direction::AtoB
            } else {
                Direction::BtoA
            };
            let d = if zero_deadlines || rng.random_bool(0.15) {
                0.0
            } else {
                rng.random_range(0.0..6.0)
            };
            Transaction::new(i as u64, dir, t, v, d)
        })
        .collect();
    (capacity, balance_a, txns)
}

fn blockage_until(result: &RunResult, t: Time) -> Amount {
    result
        .journal
        .iter()
        .filter(|r| matches!(r.outcome, Outcome::Dropped { at, .. } if at <= t))
        .map(|r| r.transaction.amount)
        .sum()
}

fn criterion_5(runs: &mut Runs) -> Check {
    const INSTANCES: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f0b);
    let (mut blocking, mut lossy) = (0, 0);
    for i in 0..INSTANCES {
        let (c, qa, w) = random_instance(&mut rng, false);
        let best = oracle_optimal(&w, c, qa, Objective::MinBlockage, 8).map_err(|e| e.to_string())?;
        let pmde = runs.run(format!("optimality/pmde/{i}"), c, qa, &PolicySpec::pmde(), w.clone())?;
        let blocked: Amount = blockage_until(pmde, f64::INFINITY);
        ensure(blocked == best.value, || {
            format!(
                "instance {i}: PMDE blockage {blocked}, optimum {} ({w:?}, C={c}, Q^A={qa})",
                best.value
            )
        })?;
        for &(t, min_r) in &best.min_blockage_by_instant {
            let r = blockage_until(pmde, t);
            ensure(r == min_r, || {
                format!("instance {i}: PMDE blockage {r} at t={t}, pointwise optimum {min_r}")
            })?;
        }
        blocking += usize::from(best.value > 0);
        runs.run(format!("optimality/pri-ip/{i}"), c, qa, &pri_ip(), w)?;
    }
    for i in 0..INSTANCES {
        let (c, qa, w) = random_instance(&mut rng, true);
        let best = oracle_optimal(&w, c, qa, Objective::MaxThroughput, 8).map_err(|e| e.to_string())?;
        let pfi = runs.run(format!("optimality/pfi/{i}"), c, qa, &PolicySpec::pfi(), w.clone())?;
        let s = pfi.executed_amount();
        lossy += usize::from(s < w.iter().map(|t| t.amount).sum());
        ensure(s == best.value, || {
            format!(
                "instance {i}: PFI throughput {s}, optimum {} ({w:?}, C={c}, Q^A={qa})",
                best.value
            )
        })?;
    }
    Ok(format!(
        "PMDE blockage optimal at every instant on {INSTANCES} instances ({blocking} with forced blockage); \
         PFI throughput optimal on {INSTANCES} zero-deadline instances ({lossy} with drops)"
    ))
}

fn check_invariants(rec: &Recorded) -> Result<(), String> {
    let label = &rec.label;
    let result = &rec.result;
    for snap in &result.snapshots {
        ensure(snap.balance_a + snap.balance_b == rec.capacity, || {
            format!(
                "{label}: balances {}+{} after event {}",
                snap.balance_a, snap.balance_b, snap.index
            )
        })?;
        ensure(snap.totals.identity_holds(), || {
            format!(
                "{label}: ledger identity broken after event {}: {:?}",
                snap.index, snap.totals
            )
        })?;
    }
    ensure(!result.snapshots.is_empty() || rec.workload.is_empty(), || {
        format!("{label}: no snapshots")
    })?;

    ensure(result.journal.len() == rec.workload.len(), || {
        format!("{label}: journal size mismatch")
    })?;
    let ids: BTreeSet<TxnId> = result.journal.iter().map(|r| r.transaction.id).collect();
    ensure(ids.len() == result.journal.len(), || {
        format!("{label}: duplicate journal ids")
    })?;
    let mut resolved = BTreeSet::new();
    let mut state = pcn_core::channel::ChannelState::new(rec.capacity, rec.balance_a).map_err(|e| e.to_string())?;
    for step in &result.trace {
        let id = match step {
            TraceStep::Apply(a) => Some(state.buffer(a.node)[a.buffer_index].id()),
            TraceStep::Expire { node, index } => Some(state.buffer(*node)[*index].id()),
            _ => None,
        };
        if let Some(id) = id {
            ensure(resolved.insert(id), || format!("{label}: {id} resolved twice"))?;
        }
        let single = replay_step(&mut state, step);
        single.map_err(|e| format!("{label}: replay failed: {e}"))?;
    }
    for r in &result.journal {
        ensure(r.outcome.is_terminal(), || {
            format!("{label}: {} ended {}", r.transaction.id, r.outcome.label())
        })?;
        ensure(resolved.contains(&r.transaction.id), || {
            format!("{label}: {} has no resolving step", r.transaction.id)
        })?;
    }
    let replayed = replay(rec.capacity, rec.balance_a, &result.trace).map_err(|e| format!("{label}: {e}"))?;
    ensure(replayed.snapshot() == result.final_state, || {
        format!("{label}: replay diverges")
    })?;

    let again = run(
        &EngineConfig::new(rec.capacity, rec.balance_a),
        &rec.policy,
        &rec.workload,
    )
    .map_err(|e| format!("{label}: rerun: {e}"))?;
    ensure(
        format!("{:?}", again.journal) == format!("{:?}", result.journal),
        || format!("{label}: rerun journal differs"),
    )?;

    if rec.policy.kind == PolicyKind::Pri && rec.policy.immediate_processing {
        let sacrificed = result.journal.iter().filter(|r| r.is_sacrificed()).count();
        ensure(sacrificed == 0, || format!("{label}: PRI-IP sacrificed {sacrificed}"))?;
    }
    Ok(())
}

fn replay_step(
    state: &mut pcn_core::channel::ChannelState,
    step: &TraceStep,
) -> Result<(), pcn_core::channel::ChannelError> {
    match step {
        TraceStep::Advance(t) => state.advance_to(*t),
        TraceStep::Admit(t) => state.admit(t.clone()),
        TraceStep::Apply(a) => state.apply(*a).map(|_| ()),
        TraceStep::Expire { node, index } => state
            .apply_drop(*node, *index, pcn_core::channel::DropCause::Expired)
            .map(|_| ()),
        TraceStep::Truncate => {
            state.truncate_all();
            Ok(())
        }
    }
}

fn criterion_6(runs: &mut Runs) -> Check {
    // buffered stochastic workloads for the PRI-IP sacrifice check
    let demand = DemandSpec::symmetric(SideDemand {
        rate: 1.0 / 3.0,
        stop: Stop::Count(500),
        amount: AmountDist::Fixed(50),
        deadline: DeadlineDist::Uniform { max: 30.0 },
    });
    for seed in 0..3 {
        let w = generate(&demand, seed, 300).map_err(|e| e.to_string())?;
        ensure(w == generate(&demand, seed, 300).map_err(|e| e.to_string())?, || {
            format!("workload seed {seed} not reproducible")
        })?;
        runs.run(format!("stochastic/pri-ip/{seed}"), 300, 0, &pri_ip(), w.clone())?;
        runs.run(format!("stochastic/pmde/{seed}"), 300, 0, &PolicySpec::pmde(), w)?;
    }
    let mut events = 0;
    for rec in &runs.0 {
        check_invariants(rec)?;
        events += rec.result.snapshots.len();
    }
    Ok(format!("{} runs, {events} events checked", runs.0.len()))
}

fn criterion_7() -> Check {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/symmetric_fixed.toml");
    let config = ExperimentConfig::load(&path).map_err(|e| e.to_string())?;
    ensure(config.repetitions == 10, || "config must use 10 repetitions".into())?;
    let resolved = config.resolve(path.parent().unwrap()).map_err(|e| e.to_string())?;
    let output = execute(&resolved, &RunOptions::default()).map_err(|e| e.to_string())?;
    let stats = |policy: &str, d: f64| {
        output
            .summary
            .iter()
            .find(|s| s.policy.starts_with(policy) && s.sweep_value == Some(d))
            .and_then(|s| s.stat("executed_amount"))
            .cloned()
            .ok_or_else(|| format!("no summary row for {policy} at {d}"))
    };
    let at0 = stats("pmde", 0.0)?;
    let at60 = stats("pmde", 60.0)?;
    ensure(at60.mean > at0.mean, || {
        format!(
            "PMDE mean throughput {} at 60 s not above {} at 0 s",
            at60.mean, at0.mean
        )
    })?;
    let mut tightest = f64::INFINITY;
    for d in config.sweep_values().into_iter().flatten().filter(|&d| d >= 10.0) {
        let pmde = stats("pmde", d)?;
        let pri = stats("pri-ip", d)?;
        let band = pri.max - pri.min;
        let slack = pmde.mean - (pri.mean - band);
        ensure(slack >= 0.0, || {
            format!(
                "d_max={d}: PMDE mean {} below PRI-IP mean {} by more than its band {band}",
                pmde.mean, pri.mean
            )
        })?;
        tightest = tightest.min(slack);
    }
    Ok(format!(
        "PMDE {} -> {} from 0 s to 60 s; PMDE within PRI-IP band at every d_max >= 10 (min slack {tightest})",
        at0.mean, at60.mean
    ))
}

fn main() -> ExitCode {
    let mut runs = Runs::default();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 fig3 scenario", Box::new(criterion_1)),
        ("2 unequal-amount counterexample", Box::new(criterion_2)),
        ("3 unbuffered success rate convergence", Box::new(criterion_3)),
        ("4 stationary distribution forms agree", Box::new(|_| criterion_4())),
        ("5 optimality on small instances", Box::new(criterion_5)),
        ("6 invariants across all runs", Box::new(criterion_6)),
        ("7 buffering-time trend", Box::new(|_| criterion_7())),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check(&mut runs);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.2}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
