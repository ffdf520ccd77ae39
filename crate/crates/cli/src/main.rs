mod checks;
mod config;
mod experiments;
mod fixtures;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use config::{Command, ExperimentConfig};
use output::{Manifest, Versions};

/// Gaussian approximation experiments for Poisson functionals.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// What to run; overrides `command` in the config file.
    command: Option<Command>,
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Smaller grids and fewer replications.
    #[arg(long)]
    quick: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => return config_failure(&e.to_string()),
        },
        None => ExperimentConfig::default(),
    };
    if cli.command.is_some() {
        cfg.command = cli.command;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.reps.is_some() {
        cfg.reps = cli.reps;
    }
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    cfg.quick |= cli.quick;

    let command = match cfg.validate() {
        Ok(c) => c,
        Err(e) => return config_failure(&e.to_string()),
    };
    let bounds_input = if command == Command::Bounds {
        match experiments::prepare_bounds(&cfg.bounds, cfg.seed) {
            Ok(x) => Some(x),
            Err(e) => return config_failure(&format!("config error: {e}")),
        }
    } else {
        None
    };

    let start = Instant::now();
    let (seed, reps) = (cfg.seed, cfg.reps());
    let run = match command {
        Command::Verify => checks::Suite { seed, reps, quick: cfg.quick }
            .run()
            .map(|checks| experiments::Outcome { artifacts: Vec::new(), checks }),
        Command::Bounds => experiments::bounds(bounds_input.as_ref().expect("prepared above"), &cfg.bounds, seed, reps),
        Command::Besov => experiments::besov(&cfg.besov, seed, reps, cfg.quick),
        Command::Rgg => experiments::rgg(&cfg.rgg, seed, reps, cfg.quick),
    };
    let mut outcome = match run {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if command == Command::Verify {
        match output::csv_rows("checks.csv", seed, &outcome.checks) {
            Ok(a) => outcome.artifacts.push(a),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
    }

    let mut files: Vec<String> = outcome.artifacts.iter().map(|a| a.name.clone()).collect();
    files.push("manifest.json".into());
    let manifest = Manifest {
        command: command.to_string(),
        seed,
        reps,
        config: &cfg,
        versions: Versions::current(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        checks: &outcome.checks,
        files,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    outcome.artifacts.push(output::Artifact { name: "manifest.json".into(), bytes: json });
    if let Err(e) = output::write_all(&cfg.output_dir, &outcome.artifacts) {
        eprintln!("error: writing {}: {e}", cfg.output_dir.display());
        return ExitCode::from(1);
    }

    for c in &outcome.checks {
        println!("{} {:<28} {:>12.4e} (threshold {:.3e}) {}", if c.passed { "PASS" } else { "FAIL" }, c.check, c.statistic, c.threshold, c.detail);
    }
    let failed: Vec<&str> = outcome.checks.iter().filter(|c| !c.passed).map(|c| c.check.as_str()).collect();
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        ExitCode::from(1)
    }
}

fn config_failure(msg: &str) -> ExitCode {
    eprintln!("{msg}");
    ExitCode::from(2)
}
