//! `seqdesign`: run, sweep and verify sequential adaptive-estimation
//! experiments.
//!
//! Exit codes: 0 success, 1 invalid input (bad config, flags or arguments),
//! 2 verification failure.

use std::env;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use seqdesign_core::doptimal::{per_cost_information, Normalization};
use seqdesign_core::harness::{
    run_experiment, run_sweep, write_report_csv, write_run, write_sweep, Experiment, SweepPlan,
    FORMAT_VERSION,
};
use seqdesign_core::linalg::log_det_spd;
use seqdesign_core::{run_verification, Error, ExperimentConfig};

/// Environment variable that overrides the configured output directory.
const OUT_ENV: &str = "SEQDESIGN_OUT";

#[derive(Parser, Debug)]
#[command(
    name = "seqdesign",
    version,
    about = "Sequential Bayesian adaptive estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment (all replicates) and write trace CSVs.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run the sweep described by the config's [sweep] section.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Print the D-optimal reference design at the config's θ₀ as JSON.
    Doptimal {
        config: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Run the invariant suite.
    Verify {
        #[arg(long)]
        quiet: bool,
    },
    /// Aggregate the trace CSVs under a directory into report.csv.
    Report {
        dir: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(Args, Debug)]
struct RunOpts {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Stop after this many trials (replaces any cost budget).
    #[arg(long, conflicts_with = "budget")]
    trials: Option<usize>,
    /// Stop once cumulative cost exceeds this (replaces any trial count).
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    quiet: bool,
}

enum Failure {
    Invalid(String),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn load(path: &Path, opts: Option<&RunOpts>) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut config = ExperimentConfig::from_toml_str(&text)?;
    if let Some(o) = opts {
        if let Some(s) = o.seed {
            config.run.seed = s;
        }
        if let Some(r) = o.replicates {
            config.run.replicates = r;
        }
        if let Some(t) = o.trials {
            config.run.trials = Some(t);
            config.run.budget = None;
        }
        if let Some(b) = o.budget {
            config.run.budget = Some(b);
            config.run.trials = None;
        }
        config.validate()?;
    }
    Ok(config)
}

/// `--out`, then the environment override, then the config.
fn output_dir(opts: &RunOpts, config: &ExperimentConfig) -> Option<PathBuf> {
    opts.out
        .clone()
        .or_else(|| {
            env::var_os(OUT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .or_else(|| config.output.dir.clone())
}

fn print_json(value: serde_json::Result<serde_json::Value>) -> Result<(), Failure> {
    let text = value
        .and_then(|v| serde_json::to_string_pretty(&v))
        .map_err(|e| Failure::Invalid(e.to_string()))?;
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(io::stdout().lock(), "{text}");
    Ok(())
}

fn cmd_run(path: &Path, opts: &RunOpts) -> Result<(), Failure> {
    let config = load(path, Some(opts))?;
    let result = run_experiment(&config)?;
    if let Some(dir) = output_dir(opts, &config) {
        let files = write_run(&result, &dir)?;
        if !opts.quiet {
            eprintln!(
                "wrote {} trace file(s) and summary.json to {}",
                files.len(),
                dir.display()
            );
        }
    }
    if !opts.quiet {
        print_json(serde_json::to_value(&result.summary))?;
    }
    Ok(())
}

fn cmd_sweep(path: &Path, opts: &RunOpts) -> Result<(), Failure> {
    let config = load(path, Some(opts))?;
    let plan = SweepPlan::from_config(&config)?
        .ok_or_else(|| Failure::Invalid("sweep: config has no [sweep] section".into()))?;
    let result = run_sweep(&config, &plan)?;
    if let Some(dir) = output_dir(opts, &config) {
        write_sweep(&result, &dir)?;
        if !opts.quiet {
            eprintln!(
                "wrote {} run(s) and sweep.json to {}",
                result.runs.len(),
                dir.display()
            );
        }
    }
    if !opts.quiet {
        print_json(serde_json::to_value(&result.summary))?;
    }
    Ok(())
}

fn cmd_doptimal(path: &Path, quiet: bool) -> Result<(), Failure> {
    let config = load(path, None)?;
    let theta0 = config.theta0()?.ok_or_else(|| {
        Failure::Invalid("run.theta0: doptimal needs a fixed θ₀, not \"prior\"".into())
    })?;
    let exp = Experiment::build(&config)?;
    let unit = exp.reference_design(&theta0, Normalization::UnitCost)?;
    let cost = exp.reference_design(&theta0, Normalization::PerCost)?;
    // what the unit-cost design buys per unit of expected cost
    let unit_per_cost = log_det_spd(&per_cost_information(
        exp.model.as_ref(),
        &theta0,
        &unit,
        &exp.cost,
    )?)
    .exp();
    let report = json!({
        "format_version": FORMAT_VERSION,
        "theta0": theta0,
        "b_star": unit.b_star,
        "h_star_nats": unit.h_star_nats,
        "b_star_per_cost": cost.b_star,
        "h_star_per_cost_nats": cost.h_star_nats,
        "det_ratio_per_cost_to_unit": cost.det / unit.det,
        "unit_design_det_per_cost": unit_per_cost,
        "cost_aware_advantage": cost.det / unit_per_cost,
        "unit_cost": unit.clone(),
        "per_cost": cost.clone(),
    });
    if !quiet {
        print_json(Ok(report))?;
    }
    Ok(())
}

fn cmd_verify(quiet: bool) -> Result<(), Failure> {
    let report = run_verification();
    for c in &report.checks {
        if !quiet || !c.passed {
            println!(
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
    }
    if report.all_passed() {
        if !quiet {
            println!("{} checks passed", report.checks.len());
        }
        Ok(())
    } else {
        println!(
            "{} of {} checks failed",
            report.failures(),
            report.checks.len()
        );
        Err(Failure::Verification)
    }
}

fn cmd_report(dir: &Path, quiet: bool) -> Result<(), Failure> {
    let (out, traces) = write_report_csv(dir)?;
    if !quiet {
        println!("aggregated {traces} trace(s) into {}", out.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Run { config, opts } => cmd_run(config, opts),
        Command::Sweep { config, opts } => cmd_sweep(config, opts),
        Command::Doptimal { config, quiet } => cmd_doptimal(config, *quiet),
        Command::Verify { quiet } => cmd_verify(*quiet),
        Command::Report { dir, quiet } => cmd_report(dir, *quiet),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Verification) => ExitCode::from(2),
    }
}
