//! `overparam`: run experiment plans, roll up their records, draw charts and
//! self-check the numerical core.

mod figures;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use overparam_runner::data::DATA_ENV;
use overparam_runner::{analyze_store, checks, load_plan, run_plan, ExperimentPlan, Progress, RunOptions, Store, Suite};

#[derive(Parser)]
#[command(name = "overparam", version, about = "Generalization experiments on small networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Output directory for records and roll-ups [default: runs/<suite>]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Use seeds 0..N instead of the plan's seed list
    #[arg(long, value_name = "N")]
    seeds: Option<u64>,
    /// Recompute cells that already have a record
    #[arg(long)]
    force: bool,
    /// Number of cells trained in parallel
    #[arg(long, value_name = "N", default_value_t = 1)]
    jobs: usize,
    /// Directory holding the MNIST / CIFAR-10 files
    #[arg(long, value_name = "DIR", env = DATA_ENV, default_value = "data")]
    data_root: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run every missing cell of a plan file, then write the roll-ups
    Run {
        /// Plan file (TOML)
        #[arg(value_name = "PLAN", required_unless_present = "plan")]
        plan_file: Option<PathBuf>,
        /// Plan file (TOML); alternative to the positional argument
        #[arg(long, value_name = "PATH", conflicts_with = "plan_file")]
        plan: Option<PathBuf>,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Run a suite's built-in desk-scale plan
    Sweep {
        /// double-descent, implicit-reg, landscape-compare, ntk-sweep or lottery
        #[arg(value_name = "SUITE")]
        suite: String,
        /// Print the plan as TOML instead of running it
        #[arg(long)]
        print_plan: bool,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Regenerate CSV and JSON roll-ups from stored records
    Analyze {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Draw SVG charts from the CSV roll-ups in a directory
    Plot {
        /// Suites to draw [default: every suite with a CSV]
        #[arg(value_name = "SUITE")]
        suites: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Check gradients, Hessian products, power iteration and statistics
    /// against slow reference implementations
    Verify,
}

fn parse_suite(s: &str) -> Result<Suite> {
    Suite::parse(s).with_context(|| {
        let names: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
        format!("unknown suite {s:?} (expected one of {})", names.join(", "))
    })
}

fn progress(event: Progress<'_>) {
    match event {
        Progress::Skipped { cell } => eprintln!("skip  {} seed {}", cell.label, cell.seed()),
        Progress::Started { cell } => eprintln!("start {} seed {}", cell.label, cell.seed()),
        Progress::Finished { cell, seconds, diverged } => eprintln!(
            "done  {} seed {} in {seconds:.1}s{}",
            cell.label,
            cell.seed(),
            if diverged { " (diverged)" } else { "" }
        ),
        Progress::Failed { cell, error } => eprintln!("FAIL  {} seed {}: {error}", cell.label, cell.seed()),
    }
}

fn execute(mut plan: ExperimentPlan, args: RunArgs) -> Result<ExitCode> {
    if let Some(n) = args.seeds {
        if n == 0 {
            bail!("--seeds must be at least 1");
        }
        plan.seeds = (0..n).collect();
    }
    let out = args.out.unwrap_or_else(|| Path::new("runs").join(plan.suite.name()));
    let opts = RunOptions { out: out.clone(), data_root: args.data_root, jobs: args.jobs.max(1), force: args.force };
    let report = run_plan(&plan, &opts, &progress)?;
    for path in analyze_store(&Store::new(&out))? {
        println!("wrote {}", path.display());
    }
    println!(
        "{} completed, {} already present, {} failed",
        report.completed.len(),
        report.skipped.len(),
        report.failed.len()
    );
    Ok(if report.ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn plot(dir: &Path, suites: &[String]) -> Result<()> {
    let chosen: Vec<Suite> = if suites.is_empty() {
        Suite::ALL.into_iter().filter(|s| dir.join(format!("{}.csv", s.name())).is_file()).collect()
    } else {
        suites.iter().map(|s| parse_suite(s)).collect::<Result<_>>()?
    };
    if chosen.is_empty() {
        bail!("no roll-up CSVs in {}; run `overparam analyze` first", dir.display());
    }
    for suite in chosen {
        let table = figures::Table::read(&dir.join(format!("{}.csv", suite.name())))?;
        let svg = svg::emit_svg(&figures::charts(suite, &table)?)?;
        let path = dir.join(format!("{}.svg", suite.name()));
        std::fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { plan_file, plan, args } => {
            let path = plan.or(plan_file).expect("clap requires one of the two");
            execute(load_plan(&path)?, args)
        }
        Command::Sweep { suite, print_plan, args } => {
            let plan = ExperimentPlan::desk_default(parse_suite(&suite)?);
            if print_plan {
                print!("{}", plan.to_toml());
                return Ok(ExitCode::SUCCESS);
            }
            execute(plan, args)
        }
        Command::Analyze { out } => {
            let written = analyze_store(&Store::new(&out))?;
            if written.is_empty() {
                bail!("no records under {}", out.join("records").display());
            }
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { suites, out } => {
            plot(&out, &suites)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify => {
            let results = checks::all();
            for c in &results {
                println!("{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if results.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
