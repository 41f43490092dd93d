mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use commands::CommandError;
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

/// Layered approximate solutions of Δu + λ²eᵘ = 0 on doubly connected planar domains.
///
/// Exit status: 0 success, 1 numerical failure or violated bound, 2 configuration error.
#[derive(Parser)]
#[command(name = "gelfand", version)]
struct Cli {
    /// TOML run configuration; defaults apply to every missing field.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configured one.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// λ values, overriding the configured list (repeatable).
    #[arg(long, short, global = true)]
    lambda: Vec<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also write SVG drawings.
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract the interface curve and check the reflection identity.
    Gamma,
    /// Solve the matching problem for each λ.
    Match,
    /// Evaluate the global approximation on a grid.
    Assemble,
    /// Sample the residual of the global approximation.
    Residual,
    /// Fit the scaling of every bound across the λ list.
    Sweep,
    /// Compare against the radial shooting solution on concentric annuli.
    RadialCheck,
    /// Print the default configuration as TOML.
    PrintDefaults,
}

fn load(cli: &Cli) -> Result<RunConfig, CommandError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CommandError::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_toml(&text).map_err(|e| CommandError::Config(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if !cli.lambda.is_empty() {
        cfg.lambdas = cli.lambda.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.emit.svg |= cli.svg;
    cfg.validate().map_err(|e| CommandError::Config(e.to_string()))?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<commands::Flags, CommandError> {
    if let Command::PrintDefaults = cli.command {
        print!("{}", RunConfig::default().to_toml());
        return Ok(Vec::new());
    }
    let cfg = load(cli)?;
    match cli.command {
        Command::Gamma => commands::gamma(&cfg),
        Command::Match => commands::matching(&cfg),
        Command::Assemble => commands::assemble(&cfg),
        Command::Residual => commands::residual(&cfg),
        Command::Sweep => commands::sweep_cmd(&cfg),
        Command::RadialCheck => commands::radial_check(&cfg),
        Command::PrintDefaults => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(flags) if flags.is_empty() => ExitCode::SUCCESS,
        Ok(flags) => {
            for f in &flags {
                log::error!("{f}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
