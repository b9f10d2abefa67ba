//! `slgp`: plan, simulate and self-test skeleton-conditioned path mixtures.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use slgp_core::exec::ControllerMode;
use slgp_core::scenarios::ScenarioName;

use config::{resolve, Overrides};

#[derive(Parser)]
#[command(name = "slgp", version, about = "Planning and closed-loop execution over skeleton path mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every skeleton and write the mixture, policies and report.
    Plan(RunArgs),
    /// Plan, then run closed-loop rollouts over a range of seeds.
    Simulate(RunArgs),
    /// Run the oracle and invariant suites.
    Selftest,
}

fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

#[derive(Args)]
struct RunArgs {
    /// elbow, push or tworoute.
    #[arg(long, value_parser = serde_enum::<ScenarioName>)]
    scenario: Option<ScenarioName>,
    /// JSON run configuration merged over the scenario defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dot-path override, e.g. `solver.muInit=2`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// blending or switching.
    #[arg(long, value_parser = serde_enum::<ControllerMode>)]
    controller: Option<ControllerMode>,
    /// Multiplier on the scenario noise level.
    #[arg(long)]
    noise: Option<f64>,
    /// `step:dx,dy,...`; repeatable.
    #[arg(long, value_name = "STEP:DX,DY")]
    disturb: Vec<String>,
    /// `a..b` (inclusive) or a single seed.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record solver iterations to trace-<skeleton>.csv.
    #[arg(long)]
    trace: bool,
}

impl RunArgs {
    fn overrides(self) -> Overrides {
        Overrides {
            scenario: self.scenario,
            config: self.config,
            set: self.set,
            controller: self.controller,
            noise: self.noise,
            disturb: self.disturb,
            seeds: self.seeds,
            out: self.out,
            trace: self.trace,
        }
    }
}

fn init_workers() -> Result<()> {
    if let Ok(v) = std::env::var("SLGP_WORKERS") {
        let n: usize = v.parse().with_context(|| format!("SLGP_WORKERS=`{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn plan(args: RunArgs) -> Result<ExitCode> {
    let config = resolve(&args.overrides())?;
    config.validate(false)?;
    let run = pipeline::run_plan(&config)?;
    pipeline::write_plan(&run, &config)?;
    print!("{}", pipeline::plan_report(&run, &config)?);
    Ok(if run.converged() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn simulate(args: RunArgs) -> Result<ExitCode> {
    let config = resolve(&args.overrides())?;
    config.validate(true)?;
    let run = pipeline::run_plan(&config)?;
    pipeline::write_plan(&run, &config)?;
    if !run.converged() {
        print!("{}", pipeline::plan_report(&run, &config)?);
        return Ok(ExitCode::FAILURE);
    }
    let records = pipeline::run_rollouts(&run, &config)?;
    pipeline::write_simulation(&run, &config, &records)?;
    let st = pipeline::stats(&records);
    println!(
        "{} seeds, {} aborted, mean final error {:.6}, mean switches {:.2}",
        st.seeds, st.aborted, st.mean_final_error, st.mean_switches
    );
    Ok(if st.aborted == st.seeds { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn selftest() -> ExitCode {
    let report = slgp_core::selftest::run();
    println!("{report}");
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
        eprintln!("selftest failed: {}", names.join(", "));
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_workers() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Plan(a) => plan(a),
        Command::Simulate(a) => simulate(a),
        Command::Selftest => Ok(selftest()),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
