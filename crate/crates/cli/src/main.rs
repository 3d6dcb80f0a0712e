use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pcn_core::analytics::analytical_success_rate;
use pcn_core::experiment::{
    format_float, policy_by_name, run_experiment, run_scenario, OutputFormat, RunOptions, Scenario,
};

#[derive(Parser)]
#[command(
    name = "pcn-sim",
    version,
    about = "Payment channel simulator with pending-transaction buffers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioName {
    Fig3,
    Counterexample,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write results into a directory.
    Run {
        config: PathBuf,
        #[arg(long, env = "PCN_SIM_OUT")]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Also write transactions.csv with one row per transaction per run.
        #[arg(long)]
        per_txn: bool,
    },
    /// Replay a scripted example and compare with its known outcome.
    Scenario {
        #[arg(value_enum)]
        name: ScenarioName,
        /// pfi, pmde, gpmde, pri-ip or pri-nip
        #[arg(long)]
        policy: Option<String>,
    },
    /// Stationary law and success rate of the unbuffered channel.
    Analytic {
        #[arg(long)]
        capacity: u64,
        #[arg(long)]
        amount: u64,
        #[arg(long)]
        lambda_a: f64,
        #[arg(long)]
        lambda_b: f64,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            seed,
            format,
            per_txn,
        } => {
            let options = RunOptions {
                jobs,
                seed,
                format: match format {
                    Format::Csv => OutputFormat::Csv,
                    Format::Json => OutputFormat::Json,
                },
                per_txn,
            };
            let output =
                run_experiment(&config, &out, &options).with_context(|| format!("experiment {}", config.display()))?;
            println!(
                "{} runs, {} summary rows written to {}",
                output.rows.len(),
                output.summary.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Scenario { name, policy } => {
            let scenario = match name {
                ScenarioName::Fig3 => Scenario::Fig3,
                ScenarioName::Counterexample => Scenario::Counterexample,
            };
            let policy = policy.as_deref().map(policy_by_name).transpose()?;
            let report = run_scenario(scenario, policy)?;
            print!("{}", report.render());
            Ok(if report.reproduced() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Analytic {
            capacity,
            amount,
            lambda_a,
            lambda_b,
        } => {
            let m = analytical_success_rate(capacity, amount, lambda_a, lambda_b)?;
            println!("reduced_capacity {}", m.reduced_capacity);
            for (k, p) in m.stationary.iter().enumerate() {
                println!("pi[{k}] {}", format_float(*p));
            }
            println!("success_rate {}", format_float(m.success_rate));
            println!("rejection_rate {}", format_float(m.rejection_rate));
            println!("success_fraction {}", format_float(m.success_fraction()));
            Ok(ExitCode::SUCCESS)
        }
    }
}
