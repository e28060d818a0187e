use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ibcsim_harness::trace::{read_jsonl, write_jsonl};
use ibcsim_harness::{run_scenario, verify_trace, Check, Scenario, Verdict};

#[derive(Debug, Parser)]
#[command(name = "ibcsim", about = "Simulate inter-ledger packet relay and check its invariants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute a scenario and check its invariants.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Write the trace here as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Overrides the scenario's step bound.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Re-check a recorded trace.
    Verify {
        #[arg(long)]
        trace: PathBuf,
        /// Comma-separated check names; all checks when omitted.
        #[arg(long, value_delimiter = ',')]
        checks: Vec<Check>,
    },
}

fn report(verdicts: &[Verdict]) -> ExitCode {
    for v in verdicts {
        println!("{v}");
    }
    if verdicts.iter().all(|v| v.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<ExitCode, Box<dyn std::error::Error>> = (|| match cli.command {
        Command::Run { scenario, seed, trace, max_steps } => {
            let scenario = Scenario::load(&scenario)?;
            let out = run_scenario(&scenario, seed, max_steps)?;
            if let Some(path) = trace {
                write_jsonl(&out.trace, BufWriter::new(File::create(path)?))?;
            }
            println!("steps: {} ({})", out.steps, if out.quiescent { "settled" } else { "step bound reached" });
            Ok(report(&out.verdicts))
        }
        Command::Verify { trace, checks } => {
            let records = read_jsonl(BufReader::new(File::open(trace)?))?;
            let checks = if checks.is_empty() { Check::ALL.to_vec() } else { checks };
            Ok(report(&verify_trace(&records, &checks)?))
        }
    })();
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
