use std::path::Path;

use pcn_core::experiment::{
    derive_seed, execute, metric_columns, run_experiment, write_outputs, ConfigError, ExperimentConfig,
    ExperimentError, OutputFormat, RunOptions,
};

const CONFIG: &str = r#"
name = "small"
capacity = 300
initial_balance_a = 0
initial_balance_b = 300
repetitions = 3
base_seed = 7

[demand.a]
rate = 0.3333333333333333
count = 120
amount = { kind = "gaussian", mean = 100.0, std = 50.0 }
deadline = { kind = "uniform", max = 5.0 }

[demand.b]
rate = 0.3333333333333333
count = 120
amount = { kind = "uniform" }
deadline = { kind = "uniform", max = 5.0 }

[[policies]]
kind = "pmde"

[[policies]]
kind = "generalized-pmde"
discipline = "largest-amount-first"

[[policies]]
kind = "pri"
immediate_processing = true

[sweep]
parameter = "max_buffering_time"
values = [0, 4.5, 20]
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn repeated_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let options = RunOptions {
        per_txn: true,
        ..RunOptions::default()
    };
    run_experiment(&config, &dir.path().join("one"), &options).unwrap();
    let parallel = RunOptions {
        jobs: Some(4),
        per_txn: true,
        ..RunOptions::default()
    };
    run_experiment(&config, &dir.path().join("two"), &parallel).unwrap();
    for file in ["results.csv", "summary.csv", "transactions.csv", "manifest.json"] {
        let a = std::fs::read(dir.path().join("one").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("two").join(file)).unwrap();
        assert!(a == b, "{file} differs between runs");
    }
}

#[test]
fn rows_are_ordered_and_seeded_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), CONFIG);
    let config = ExperimentConfig::load(&path).unwrap();
    let resolved = config.resolve(dir.path()).unwrap();
    let output = execute(&resolved, &RunOptions::default()).unwrap();
    assert_eq!(output.rows.len(), 3 * 3 * 3);
    assert_eq!(output.summary.len(), 9);
    let mut expected = Vec::new();
    for p in &config.policies {
        for v in [0.0, 4.5, 20.0] {
            for run in 0..3 {
                expected.push((p.id(), Some(v), run, derive_seed(7, &p.id(), Some(v), run)));
            }
        }
    }
    let got: Vec<_> = output
        .rows
        .iter()
        .map(|r| (r.cell.policy.clone(), r.cell.sweep_value, r.cell.run, r.cell.seed))
        .collect();
    assert_eq!(got, expected);

    // --seed replaces the base seed
    let other = execute(
        &resolved,
        &RunOptions {
            seed: Some(8),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(other.rows[0].cell.seed, derive_seed(8, &expected[0].0, Some(0.0), 0));
    assert_eq!(other.manifest.base_seed, 8);
}

#[test]
fn single_cell_rerun_reproduces_its_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), CONFIG);
    let full = ExperimentConfig::load(&path).unwrap();
    let output = execute(&full.resolve(dir.path()).unwrap(), &RunOptions::default()).unwrap();
    let target = output
        .rows
        .iter()
        .find(|r| r.cell.sweep_value == Some(4.5) && r.cell.run == 2)
        .unwrap();

    let narrowed = CONFIG.replace("values = [0, 4.5, 20]", "values = [4.5]");
    let single = ExperimentConfig::from_toml(&narrowed, Path::new("narrowed.toml")).unwrap();
    let out = execute(&single.resolve(dir.path()).unwrap(), &RunOptions::default()).unwrap();
    let again = out.rows.iter().find(|r| r.cell == target.cell).unwrap();
    assert_eq!(again, target);
}

#[test]
fn summary_means_equal_row_means() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    run_experiment(&config, &out, &RunOptions::default()).unwrap();

    let mut results = csv::Reader::from_path(out.join("results.csv")).unwrap();
    let header = results.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = results.records().map(Result::unwrap).collect();
    let mut summary = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let sheader = summary.headers().unwrap().clone();
    let col = |h: &csv::StringRecord, name: &str| h.iter().position(|c| c == name).unwrap();

    // ratio columns in results.csv are rounded, so their exact values come
    // from the in-memory rows; integer columns are checked against the file
    let cfg = ExperimentConfig::load(&config).unwrap();
    let output = execute(&cfg.resolve(dir.path()).unwrap(), &RunOptions::default()).unwrap();
    let columns = metric_columns();
    for srow in summary.records().map(Result::unwrap) {
        let policy = &srow[col(&sheader, "policy")];
        let sweep = &srow[col(&sheader, "sweep_value")];
        let group: Vec<_> = output
            .rows
            .iter()
            .filter(|r| {
                r.cell.policy == policy && pcn_core::experiment::format_float(r.cell.sweep_value.unwrap()) == sweep
            })
            .collect();
        assert_eq!(group.len(), 3);
        let printed: Vec<_> = rows
            .iter()
            .filter(|r| &r[col(&header, "policy")] == policy && &r[col(&header, "sweep_value")] == sweep)
            .collect();
        assert_eq!(printed.len(), 3);
        for (j, name) in columns.iter().enumerate() {
            let mean = group.iter().map(|r| r.values()[j]).sum::<f64>() / 3.0;
            let reported: f64 = srow[col(&sheader, &format!("{name}_mean"))].parse().unwrap();
            assert_eq!(reported, mean, "{policy} {sweep} {name}");
            let stats = output
                .summary
                .iter()
                .find(|s| s.policy == policy && s.sweep_value == group[0].cell.sweep_value)
                .unwrap();
            assert_eq!(stats.columns[name].mean, mean, "{name} mean not exact");
            if name.ends_with("_count") || name.ends_with("_amount") {
                let sum: u64 = printed
                    .iter()
                    .map(|r| r[col(&header, name)].parse::<u64>().unwrap())
                    .sum();
                assert_eq!(reported, sum as f64 / 3.0, "{policy} {sweep} {name}");
            }
        }
    }
}

#[test]
fn per_txn_export_covers_every_transaction() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let output = run_experiment(
        &config,
        &out,
        &RunOptions {
            per_txn: true,
            ..RunOptions::default()
        },
    )
    .unwrap();
    let mut reader = csv::Reader::from_path(out.join("transactions.csv")).unwrap();
    let n = reader.records().count();
    let arrived: u64 = output.rows.len() as u64 * 240;
    assert_eq!(n as u64, arrived);
    let in_window = output
        .transactions
        .as_ref()
        .unwrap()
        .iter()
        .filter(|t| t.in_window)
        .count() as u64;
    let windowed: u64 = output.rows.iter().map(|r| r.metrics.total.arrived_count).sum();
    assert_eq!(in_window, windowed);
}

#[test]
fn json_format_writes_json_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &CONFIG.replace("repetitions = 3", "repetitions = 1"));
    let out = dir.path().join("out");
    let options = RunOptions {
        format: OutputFormat::Json,
        ..RunOptions::default()
    };
    run_experiment(&config, &out, &options).unwrap();
    assert!(!out.join("results.csv").exists());
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 9);
    assert!(rows[0]["metrics"]["a"]["executed_amount"].is_u64());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["cells"].as_array().unwrap().len(), 9);
    assert_eq!(manifest["config"]["capacity"], 300);
}

#[test]
fn failed_write_removes_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &CONFIG.replace("repetitions = 3", "repetitions = 1"));
    let config = ExperimentConfig::load(&path).unwrap();
    let output = execute(&config.resolve(dir.path()).unwrap(), &RunOptions::default()).unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(out.join("summary.csv")).unwrap();
    let err = write_outputs(&out, &output).unwrap_err();
    assert!(matches!(err, ExperimentError::Csv { .. }), "{err}");
    assert!(!out.join("results.csv").exists());
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &CONFIG.replace("repetitions = 3", "repetitions = 0"));
    match run_experiment(&config, &dir.path().join("out"), &RunOptions::default()).unwrap_err() {
        ExperimentError::Config(ConfigError::Invalid { field, .. }) => assert_eq!(field, "repetitions"),
        other => panic!("unexpected error {other}"),
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn empirical_paths_resolve_next_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("data")).unwrap();
    std::fs::write(
        dir.path().join("data/amounts.csv"),
        "Time,Amount,Class\n0,12.4,0\n1,88.5,0\n2,5000,0\n3,40,1\n4,150.2,0\n",
    )
    .unwrap();
    let text = CONFIG.replace("repetitions = 3", "repetitions = 1").replace(
        r#"amount = { kind = "uniform" }"#,
        r#"amount = { kind = "empirical", path = "data/amounts.csv" }"#,
    );
    let config = write_config(dir.path(), &text);
    let output = run_experiment(
        &config,
        &dir.path().join("out"),
        &RunOptions {
            per_txn: true,
            ..RunOptions::default()
        },
    )
    .unwrap();
    let amounts: std::collections::BTreeSet<u64> = output
        .transactions
        .unwrap()
        .iter()
        .filter(|t| t.direction == "B")
        .map(|t| t.amount)
        .collect();
    assert_eq!(amounts, [12, 89, 150].into_iter().collect());
}

#[test]
fn shipped_configs_parse() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let config = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            config.resolve(&configs).unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
