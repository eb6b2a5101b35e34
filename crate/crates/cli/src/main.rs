use std::path::PathBuf;
use std::process::ExitCode;

use aj_cli::run::{generate, run_experiment, run_oracle};
use aj_cli::CliError;
use clap::{Parser, Subcommand};
use log::LevelFilter;

/// Adversarial-jamming latent regularization experiments.
#[derive(Parser, Debug)]
#[command(name = "aj", version)]
struct Args {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Train from a config file and write metrics, checkpoint and samples.
    Train { config: PathBuf },
    /// Run the closed-form and Monte-Carlo checks of the config's oracle block.
    Oracle { config: PathBuf },
    /// Decode prior samples through a checkpoint's reconstructor.
    Generate {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_logging() {
    let level = match std::env::var("AJ_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("debug") => LevelFilter::Debug,
        _ => LevelFilter::Info,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp_secs()
        .init();
}

fn main() -> ExitCode {
    init_logging();
    let args = Args::parse();
    let result: Result<(), CliError> = match args.verb {
        Verb::Train { config } => run_experiment(&config).map(|cfg| {
            log::info!("wrote {}", cfg.output_dir.display());
        }),
        Verb::Oracle { config } => run_oracle(&config).map(|_| ()),
        Verb::Generate {
            checkpoint,
            count,
            seed,
            out,
        } => generate(&checkpoint, count, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aj: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
