use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use trickle_lab::experiment::{
    parse_threads, run_experiment, ExperimentConfig, ExperimentKind, THREADS_ENV,
};

#[derive(Debug, Parser)]
#[command(name = "trickle-lab", version, about = "Trickle and adaptive-k experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Steady-state sweeps over spatial topologies (per-degree tables).
    Sim(RunArgs),
    /// Asymptotic star-network tables.
    Star(RunArgs),
    /// DODAG formation sweeps.
    Rpl(RunArgs),
    /// Check a config and list its derived seeds without running anything.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct Overrides {
    /// Master seed, replacing the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per topology and policy.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    replications: Option<u64>,
    /// Worker threads.
    #[arg(long, env = THREADS_ENV, value_parser = threads)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON experiment config; the built-in preset is used without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: config's output_dir, else ./out].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
    #[command(flatten)]
    overrides: Overrides,
}

fn threads(s: &str) -> Result<usize, String> {
    parse_threads(s).map_err(|e| e.to_string())
}

fn load(path: Option<&PathBuf>, kind: Option<ExperimentKind>, o: &Overrides) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("in {}", p.display()))?,
        None => ExperimentConfig::preset(kind.expect("subcommands without a config name a kind")),
    };
    if let Some(kind) = kind {
        if config.kind != kind {
            bail!("config describes a {} experiment, not {kind}", config.kind);
        }
    }
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if let Some(r) = o.replications {
        config.replications = r;
    }
    Ok(config)
}

fn run(args: RunArgs, kind: ExperimentKind) -> Result<()> {
    let config = load(args.config.as_ref(), Some(kind), &args.overrides)?;
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    if !args.quiet {
        eprintln!("running {kind} experiment, seed {}, writing to {}", config.seed, out.display());
    }
    let manifest = run_experiment(&config, &out, args.overrides.threads)?;
    if !args.quiet {
        for file in &manifest.files {
            println!("{}  {}", file.sha256, out.join(&file.name).display());
        }
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<()> {
    let config = load(Some(&args.config), None, &args.overrides)?;
    if !args.quiet {
        println!("{}", config.plan());
        if let Some(out) = args.out.or(config.output_dir) {
            println!("output directory: {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim(a) => run(a, ExperimentKind::SteadyState),
        Command::Star(a) => run(a, ExperimentKind::StarAnalysis),
        Command::Rpl(a) => run(a, ExperimentKind::Rpl),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
