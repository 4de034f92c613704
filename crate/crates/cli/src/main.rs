use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reinforce_core::harness::{execute, preset, ExperimentConfig, ExperimentKind, PRESETS};
use reinforce_core::Error;

#[derive(Parser)]
#[command(name = "reinforce", version, about = "Reinforcement-dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rate profile and supermartingale check for an increment family
    Rate(RunArgs),
    /// Exit times of the one-dimensional walk
    Walk1d(RunArgs),
    /// Two-colour urn trajectories
    Urn(RunArgs),
    /// Three's Company network runs and trap detection
    Network(RunArgs),
    /// Mean-field drift and linearization spectrum
    Meanfield(RunArgs),
    /// Lyapunov certificate near the symmetric point
    Certificate(RunArgs),
    /// List the built-in presets
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset instead of a config file
    #[arg(long)]
    preset: Option<String>,
    /// Master seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides REINFORCE_OUT and the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved config and exit
    #[arg(long)]
    dry_run: bool,
}

fn load(args: &RunArgs) -> reinforce_core::Result<ExperimentConfig> {
    match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::from_file(path, args.seed),
        (None, Some(name)) => {
            let mut cfg = preset(name)?;
            if let Some(seed) = args.seed {
                cfg.master_seed = seed;
            }
            Ok(cfg)
        }
        (None, None) => Err(Error::Config("pass --config FILE or --preset NAME".into())),
    }
}

fn run(kind: ExperimentKind, args: &RunArgs) -> reinforce_core::Result<()> {
    let cfg = load(args)?;
    if cfg.kind() != kind {
        return Err(Error::Config(format!(
            "config describes a {} experiment, not {}",
            cfg.kind().as_str(),
            kind.as_str()
        )));
    }
    if args.dry_run {
        let _ = write!(io::stdout().lock(), "{}", cfg.to_text());
        return Ok(());
    }
    let outcome = execute(&cfg, args.out.as_deref())?;
    let _ = writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&outcome.summary)?);
    eprintln!("wrote {} files to {}", outcome.files.len() + 1, outcome.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Presets => {
            let mut out = io::stdout().lock();
            for (name, about) in PRESETS {
                let _ = writeln!(out, "{name:<20} {about}");
            }
            return ExitCode::SUCCESS;
        }
        Command::Rate(a) => (ExperimentKind::Rate, a),
        Command::Walk1d(a) => (ExperimentKind::Walk1d, a),
        Command::Urn(a) => (ExperimentKind::Urn, a),
        Command::Network(a) => (ExperimentKind::Network, a),
        Command::Meanfield(a) => (ExperimentKind::Meanfield, a),
        Command::Certificate(a) => (ExperimentKind::Certificate, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
        }
    }
}
