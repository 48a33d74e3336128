mod config;
mod error;
mod output;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "slowfast", version, about = "Relaxation oscillations from slow-fast entry-exit analysis")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan chi, find and classify candidates, verify at the configured epsilons.
    Analyze,
    /// Compute one heteroclinic orbit gamma(s).
    Orbit {
        #[arg(long)]
        s: f64,
    },
    /// chi for an orbit written by `orbit`.
    Chi {
        #[arg(long)]
        orbit: PathBuf,
    },
    /// lambda for an orbit written by `orbit`.
    Lambda {
        #[arg(long)]
        orbit: PathBuf,
    },
    /// Verify candidates written by `analyze`.
    Verify {
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Repeat `analyze` over values of one numeric config key.
    Sweep {
        /// Dotted key, e.g. model.chemostat.response.a
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn config_path(cli: &Cli) -> Result<&Path, CliError> {
    cli.config
        .as_deref()
        .ok_or_else(|| CliError::Config { path: None, message: "--config is required".into() })
}

fn init_workers() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("SLOWFAST_WORKERS") {
        let n: usize = v.parse().map_err(|_| CliError::Config {
            path: Some("SLOWFAST_WORKERS".into()),
            message: format!("`{v}` is not a worker count"),
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config { path: Some("SLOWFAST_WORKERS".into()), message: e.to_string() })?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    init_workers()?;
    let path = config_path(cli)?;
    if let Command::Sweep { param, values } = &cli.command {
        let base = RunConfig::load(path)?;
        pipeline::sweep_command(path, param, values, &out_dir(cli, Some(&base)))?;
        return Ok(());
    }
    let cfg = RunConfig::load(path)?;
    let out = out_dir(cli, Some(&cfg));
    match &cli.command {
        Command::Analyze => pipeline::analyze(&cfg, &out).map(|_| ()),
        Command::Orbit { s } => pipeline::orbit_command(&cfg, *s, &out).map(|_| ()),
        Command::Chi { orbit } => pipeline::chi_command(&cfg, orbit, &out).map(|_| ()),
        Command::Lambda { orbit } => pipeline::lambda_command(&cfg, orbit, &out).map(|_| ()),
        Command::Verify { candidates } => pipeline::verify_command(&cfg, candidates, &out).map(|_| ()),
        Command::Sweep { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
