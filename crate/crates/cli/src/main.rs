use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use invabc_pipeline::error::{EXIT_FAILURE, EXIT_OK, EXIT_VALIDATION};
use invabc_pipeline::{Pipeline, PipelineError, RunConfig, StageKind, StageOutcome};

#[derive(Parser)]
#[command(name = "invabc", version, about = "VAE-based ABC parameter identification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Latin hypercube training and test designs.
    Design(Common),
    /// Simulate every design row and render masked zone images.
    Simulate(Common),
    /// Build the objective image.
    BuildObjective(Common),
    /// Train the VAE and encode the training and objective images.
    TrainVae(Common),
    /// Fit the latent-space surrogate.
    FitSurrogate(Common),
    /// Score the surrogate on the test design; augments the design on failure.
    Validate(Common),
    /// Posterior inference by population Monte Carlo ABC.
    Infer(Common),
    /// Summary tables and plots.
    Report(Common),
    /// All stages, repeating simulation and training after each augmentation.
    Run(Common),
}

fn execute(cli: Cli) -> Result<StageOutcome, PipelineError> {
    let (stage, common) = match cli.command {
        Command::Design(c) => (Some(StageKind::Design), c),
        Command::Simulate(c) => (Some(StageKind::Simulate), c),
        Command::BuildObjective(c) => (Some(StageKind::BuildObjective), c),
        Command::TrainVae(c) => (Some(StageKind::TrainVae), c),
        Command::FitSurrogate(c) => (Some(StageKind::FitSurrogate), c),
        Command::Validate(c) => (Some(StageKind::Validate), c),
        Command::Infer(c) => (Some(StageKind::Infer), c),
        Command::Report(c) => (Some(StageKind::Report), c),
        Command::Run(c) => (None, c),
    };
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let dir = common.out.unwrap_or_else(|| cfg.out.clone());
    invabc::init_worker_pool().map_err(PipelineError::Config)?;
    let mut p = Pipeline::open(cfg, &dir)?;
    match stage {
        Some(k) => p.run(k),
        None => p.run_all(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK } as u8);
        }
    };
    match execute(cli) {
        Ok(o) if o.validation_failed() => ExitCode::from(EXIT_VALIDATION as u8),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
