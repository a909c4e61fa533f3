use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fraud_core::baselines::BaselineKind;
use fraudctl::commands;
use fraudctl::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "fraudctl", version, about = "Contrastive unsupervised fraud detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; relative paths inside it resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Overrides master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labelled synthetic dataset.
    GenSynth(Common),
    /// Fit the standardizer and train the contrastive encoder.
    Train(Common),
    /// Score rows with the trained encoder.
    Score(Common),
    /// Fit one baseline detector and score rows with it.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// kmeans, iforest or autoencoder.
        #[arg(long)]
        which: String,
    },
    /// Compare every score file against the labels.
    Eval(Common),
}

fn load(common: &Common) -> fraud_core::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.set_master_seed(seed);
    }
    Ok(commands::with_output_dir(cfg, common.out.clone()))
}

fn run(cli: Cli) -> fraud_core::Result<()> {
    let manifest = match cli.command {
        Command::GenSynth(c) => commands::gen_synth(&load(&c)?)?,
        Command::Train(c) => commands::train(&load(&c)?)?,
        Command::Score(c) => commands::score(&load(&c)?)?,
        Command::Baseline { common, which } => {
            let which: BaselineKind = which.parse()?;
            commands::baseline(&load(&common)?, which)?
        }
        Command::Eval(c) => {
            let (manifest, _, table) = commands::eval(&load(&c)?)?;
            print!("{table}");
            manifest
        }
    };
    log::info!("wrote {}", manifest.file_name());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(fraudctl::exit_code(e.kind()) as u8)
        }
    }
}
