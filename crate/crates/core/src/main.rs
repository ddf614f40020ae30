use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sto_hopfield::experiment::{self, ExperimentError, ExperimentSpec, Kind, Scale};

/// Phase-encoded associative memory on coupled vortex oscillators.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Experiment configuration (JSON); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Problem size preset: desk or paper.
    #[arg(long, global = true)]
    scale: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random image dataset.
    GenDataset,
    /// Train weights on the dataset.
    Train,
    /// Noisy or partial retrieval trials.
    Retrieve,
    /// Retrieval over a list of feedback strengths.
    SweepKappa,
    /// Retrieval over a list of bias spreads.
    SweepDispersion,
    /// Contrastive-divergence retraining of corrupted weights.
    CdTrain,
    /// Locking half-width against drive amplitude.
    LockCharacterize,
}

impl Command {
    fn kind(&self) -> Kind {
        match self {
            Self::GenDataset => Kind::GenDataset,
            Self::Train => Kind::Train,
            Self::Retrieve => Kind::Retrieve,
            Self::SweepKappa => Kind::SweepKappa,
            Self::SweepDispersion => Kind::SweepDispersion,
            Self::CdTrain => Kind::CdTrain,
            Self::LockCharacterize => Kind::LockCharacterize,
        }
    }
}

fn spec_from(cli: &Cli) -> Result<ExperimentSpec, ExperimentError> {
    let mut spec = match &cli.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(o) = &cli.out {
        spec.out = o.clone();
    }
    if let Some(t) = cli.threads {
        spec.threads = Some(t);
    }
    if let Some(s) = &cli.scale {
        spec.scale = s.parse::<Scale>()?;
    }
    Ok(spec)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let kind = cli.command.kind();
    match spec_from(&cli).and_then(|spec| experiment::run(&spec, kind)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
