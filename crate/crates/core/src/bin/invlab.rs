use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use invlab::experiments::{run, ExperimentConfig, ExperimentKind};
use invlab::Error;

#[derive(Parser)]
#[command(name = "invlab", version, about = "Inversion experiments on toy conditional diffusion and flow models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train(Common),
    /// Invert points and write latents and trajectories.
    Invert(Common),
    /// Invert and regenerate points; report round-trip error.
    Reconstruct(Common),
    /// Invert under the source condition and regenerate under the target class.
    Edit(Common),
    /// Reconstruction vs. edit success across point-prompt scales.
    SweepScale(Common),
    /// Flow-model inversion panels under null, correct and wrong conditions.
    Fig3(Common),
    /// DDIM round-trip error under null, class and point-prompt conditions.
    Table1(Common),
    /// Compare tight inversion against denoising fresh prior noise.
    BaselineRandom(Common),
    /// Collect `reports.json` files into one summary table.
    Report(Common),
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::Train(c) => (ExperimentKind::Train, c),
            Command::Invert(c) => (ExperimentKind::Invert, c),
            Command::Reconstruct(c) => (ExperimentKind::Reconstruct, c),
            Command::Edit(c) => (ExperimentKind::Edit, c),
            Command::SweepScale(c) => (ExperimentKind::SweepScale, c),
            Command::Fig3(c) => (ExperimentKind::Fig3, c),
            Command::Table1(c) => (ExperimentKind::Table1, c),
            Command::BaselineRandom(c) => (ExperimentKind::BaselineRandom, c),
            Command::Report(c) => (ExperimentKind::Report, c),
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Checkpoint { .. } | Error::ObjectiveMismatch { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("INVLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let (kind, common) = cli.command.split();
    let result = (|| {
        let mut config = match &common.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        if let Some(out) = common.out {
            config.output_dir = out;
        }
        if let Some(ckpt) = common.checkpoint {
            config.checkpoint = Some(ckpt);
        }
        run(kind, config)
    })();
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("invlab {}: {err}", kind.as_str());
            ExitCode::from(exit_code(&err))
        }
    }
}
