// Copyright 2026 The dspscale Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dspscale::harness::{
    generate_trace, load_trace_spec, report, resolve_seed, run_experiment, write_trace_csv, HarnessError, RunOptions,
    Scenario, SEED_ENV,
};

#[derive(Parser)]
#[command(
    name = "dspscale",
    version,
    about = "Autoscaler experiments on a simulated stream processing cluster"
)]
struct Cli {
    /// Log every control-loop decision.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every controller of a scenario and write CSVs plus a summary.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed and the DSPSCALE_SEED variable.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Generate a workload trace from a trace spec file.
    Trace {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-summarize an existing run directory.
    Report { run_dir: PathBuf },
}

const EXIT_SCENARIO: u8 = 1;
const EXIT_CONTROLLER: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_SCENARIO)
        }
    }
}

fn execute(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run { scenario, seed, out } => {
            let scenario = Scenario::load(&scenario)?;
            let env = std::env::var(SEED_ENV).ok();
            let seed = resolve_seed(seed, env.as_deref(), scenario.seed)?;
            let experiment = run_experiment(&scenario, &RunOptions { seed: Some(seed) })?;
            experiment.write(&out)?;
            print!("{}", experiment.summary.render());
            if experiment.summary.any_failed() {
                return Ok(ExitCode::from(EXIT_CONTROLLER));
            }
        }
        Command::Trace { spec, out } => {
            let base = spec.parent().map(PathBuf::from).unwrap_or_default();
            let trace_spec = load_trace_spec(&spec)?;
            let trace = generate_trace(&trace_spec, &base)?;
            write_trace_csv(&trace, &out)?;
            println!("wrote {} s of workload to {}", trace.len(), out.display());
        }
        Command::Report { run_dir } => {
            let summary = report(&run_dir).map_err(|e: HarnessError| anyhow::anyhow!(e))?;
            print!("{}", summary.render());
            if summary.any_failed() {
                return Ok(ExitCode::from(EXIT_CONTROLLER));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
