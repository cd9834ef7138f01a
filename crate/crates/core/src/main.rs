use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dalab::experiment::{self, ExperimentConfig, Pipeline, EXIT_INPUT};

/// Worker-count override for the rayon pool.
const WORKERS_VAR: &str = "DALAB_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "dalab", version, about = "Experiments on derived-from-Anosov maps of the 3-torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config document; the subcommand selects the pipeline.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override a config field: JSON pointer, `=`, JSON value (bare strings allowed).
    #[arg(long = "set", value_name = "POINTER=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Eigenvalues of the family matrix and its inverse.
    Spectrum,
    /// Lyapunov exponents, semi-rigidity and partial hyperbolicity.
    Exponents,
    /// Semi-conjugacy solve and collapse of center arcs.
    Semiconj,
    /// Conditional measures of volume along center leaves.
    Disintegrate,
    /// Exponents of the measure of maximal entropy.
    Mme,
    /// (k, θ0) grid search for the negative-center regime.
    Sweep,
    /// Every pipeline in sequence.
    Full,
}

impl From<Command> for Pipeline {
    fn from(c: Command) -> Self {
        match c {
            Command::Spectrum => Pipeline::Spectrum,
            Command::Exponents => Pipeline::Exponents,
            Command::Semiconj => Pipeline::Semiconj,
            Command::Disintegrate => Pipeline::Disintegrate,
            Command::Mme => Pipeline::Mme,
            Command::Sweep => Pipeline::Sweep,
            Command::Full => Pipeline::Full,
        }
    }
}

fn build_config(cli: &Cli) -> dalab::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::new(cli.command.into()),
    };
    config.pipeline = cli.command.into();
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    config.with_overrides(&cli.overrides)
}

fn configure_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_VAR) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("{WORKERS_VAR}={raw:?} is not a positive integer"))?;
    if n == 0 {
        return Err(format!("{WORKERS_VAR} must be positive"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_INPUT as u8),
            };
        }
    };
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_INPUT as u8);
    }
    let config = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(experiment::exit_code(&e) as u8);
        }
    };
    match experiment::run(&config) {
        Ok(outcome) => {
            if let Ok(report) = std::fs::read_to_string(outcome.output_dir.join("report.txt")) {
                print!("{report}");
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
