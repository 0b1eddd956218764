use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pgd_core::harness::{
    aggregate_seeds, registry, resolve_file, resolve_registry, run_experiment, Resolved, RunOptions, RunStatus,
};
use pgd_core::Error;

/// Environment variable for the default output root of `run`.
const OUTPUT_DIR_ENV: &str = "PGD_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "pgd", version, about = "Run and aggregate preconditioned-gradient-descent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment and write metrics.csv + manifest.json per seed.
    Run {
        #[command(flatten)]
        target: Target,
        /// Comma-separated seeds; replaces the configured list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Number of seeds trained at the same time.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        parallel_seeds: u64,
        /// Output root; runs go to <out>/<id>/seed-<seed>/.
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = "runs")]
        out: PathBuf,
    },
    /// List registry ids with a one-line description.
    List,
    /// Min/median/max of every metric across runs on a shared iteration grid.
    Aggregate {
        /// Seed directories, metrics.csv files, or an experiment directory
        /// holding seed-* subdirectories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resolve and check a configuration without training; prints it as TOML.
    Validate {
        #[command(flatten)]
        target: Target,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

#[derive(Args)]
struct Target {
    /// Registry id (see `pgd list`).
    #[arg(required_unless_present = "config", conflicts_with = "config")]
    id: Option<String>,
    /// TOML config file instead of a registry id.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override `key=value`; the key is a dotted path or a unique leaf name.
    /// Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn resolve(target: &Target, seeds: Option<Vec<u64>>) -> Result<Resolved, Failure> {
    let mut resolved = match (&target.id, &target.config) {
        (Some(id), None) => resolve_registry(id, &target.overrides)?,
        (None, Some(path)) => {
            if !path.is_file() {
                return Err(Failure::Usage(format!("config file {} does not exist", path.display())));
            }
            resolve_file(path, &target.overrides)?
        }
        _ => unreachable!("clap enforces exactly one target"),
    };
    if let Some(seeds) = seeds {
        resolved.config.seeds = seeds;
        resolved.config.validate()?;
    }
    Ok(resolved)
}

fn run(target: &Target, seeds: Option<Vec<u64>>, parallel_seeds: u64, out: &Path) -> Result<(), Failure> {
    let resolved = resolve(target, seeds)?;
    let mut opts = RunOptions::new(out);
    opts.parallel_seeds = parallel_seeds as usize;
    opts.provenance = resolved.provenance;
    let summary = run_experiment(&resolved.config, &opts)?;
    let mut failed = 0;
    for r in &summary.runs {
        match &r.status {
            RunStatus::Completed => println!("seed {}: {} rows -> {}", r.seed, r.rows, r.dir.display()),
            RunStatus::Failed { iteration, message } => {
                failed += 1;
                println!("seed {}: failed at iteration {iteration}: {message} -> {}", r.seed, r.dir.display());
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} seeds failed", summary.runs.len())));
    }
    Ok(())
}

/// Replaces an experiment directory by its `seed-*` children, in name order.
fn expand_runs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() && !p.join("metrics.csv").is_file() {
            let mut seeds: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|d| {
                    d.is_dir()
                        && d.file_name()
                            .and_then(|n| n.to_str())
                            .is_some_and(|n| n.starts_with("seed-"))
                })
                .collect();
            if seeds.is_empty() {
                return Err(Failure::Usage(format!("{} holds no metrics.csv or seed-* runs", p.display())));
            }
            seeds.sort();
            out.extend(seeds);
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(Failure::Usage(format!("{} does not exist", p.display())));
        }
    }
    Ok(out)
}

fn aggregate(runs: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let agg = aggregate_seeds(&expand_runs(runs)?)?;
    match out {
        Some(path) => {
            agg.write_csv(path)?;
            eprintln!("aggregated {} runs -> {}", agg.runs, path.display());
        }
        None => agg.write(std::io::stdout().lock())?,
    }
    Ok(())
}

fn validate(target: &Target, seeds: Option<Vec<u64>>) -> Result<(), Failure> {
    let resolved = resolve(target, seeds)?;
    let text = resolved.config.to_toml()?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{text}").map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            target,
            seeds,
            parallel_seeds,
            out,
        } => run(target, seeds.clone(), *parallel_seeds, out),
        Command::List => {
            for e in registry() {
                println!("{:<22} {}", e.id, e.description);
            }
            Ok(())
        }
        Command::Aggregate { runs, out } => aggregate(runs, out.as_deref()),
        Command::Validate { target, seeds } => validate(target, seeds.clone()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
