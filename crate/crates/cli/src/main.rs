//! End-user orchestration for the unsupervised sequence recognition
//! pipeline: data generation, language model estimation, training, boundary
//! refinement, decoding, evaluation, self-training, full runs, and sweeps.

mod config;
mod manifest;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use segodm::Error;

#[derive(Parser)]
#[command(
    name = "segodm",
    about = "Unsupervised sequence recognition via segmental output distribution matching",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus described by the config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate an N-gram label model from a corpus's transcripts.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        order: usize,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, default_value_t = 10000)]
        topk: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier once on the configured starting boundaries.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine boundaries over a corpus with a trained classifier.
    Refine {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        tolerance: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a corpus into predicted labels and boundaries.
    Decode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        lm_weight: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction artifact against a reference artifact.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 2)]
        tolerance: usize,
    },
    /// Pseudo-label a corpus and retrain a fresh classifier on it.
    Selftrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute the entire pipeline and write a run manifest.
    FullRun {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline over the configured parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the built-in desk-scale configuration.
    PrintConfig,
}

fn run(cli: Cli) -> segodm::Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let config = RunConfig::load(&config)?;
            pipeline::cmd_gen_data(&config, &out)
        }
        Command::TrainLm {
            corpus,
            order,
            alpha,
            topk,
            out,
        } => pipeline::cmd_train_lm(&corpus, order, alpha, topk, &out),
        Command::Train {
            config,
            corpus,
            lm,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            pipeline::cmd_train(&config, &corpus, &lm, &out)
        }
        Command::Refine {
            config,
            corpus,
            lm,
            checkpoint,
            beam,
            tolerance,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            let beam = beam.unwrap_or(config.boundary.beam_width);
            let tolerance = tolerance.unwrap_or(config.boundary.tolerance);
            pipeline::cmd_refine(&config, &corpus, &lm, &checkpoint, beam, tolerance, &out)
        }
        Command::Decode {
            config,
            corpus,
            lm,
            checkpoint,
            beam,
            lm_weight,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            let beam = beam.unwrap_or(config.decode.beam_width);
            let lm_weight = lm_weight.unwrap_or(config.decode.lm_weight);
            pipeline::cmd_decode(&config, &corpus, &lm, &checkpoint, beam, lm_weight, &out)
        }
        Command::Eval {
            pred,
            reference,
            tolerance,
        } => pipeline::cmd_eval(&pred, &reference, tolerance),
        Command::Selftrain {
            config,
            corpus,
            lm,
            checkpoint,
            rounds,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            pipeline::cmd_selftrain(&config, &corpus, &lm, &checkpoint, rounds, &out)
        }
        Command::FullRun { config, out } => {
            let config = RunConfig::load(&config)?;
            pipeline::cmd_full_run(&config, &out).map(|_| ())
        }
        Command::Sweep { config, out } => {
            let config = RunConfig::load(&config)?;
            pipeline::cmd_sweep(&config, &out)
        }
        Command::PrintConfig => {
            let text = toml::to_string_pretty(&RunConfig::desk_default())
                .map_err(|e| Error::Data(e.to_string()))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Config(_) => 2,
                Error::Parse { .. } | Error::Data(_) | Error::Io(_) => 3,
                Error::NonFinite { .. } => 4,
            };
            ExitCode::from(code)
        }
    }
}
