//! Command-line driver for the explanation pipeline: data preparation,
//! recommender and explainer training, explanation, exact verification,
//! evaluation, contrastive fine-tuning and report merging.

pub mod config;
pub mod error;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;
pub use stages::Ctx;

#[derive(Debug, Parser)]
#[command(name = "fcesr", version, about = "Factual and counterfactual explanations for session recommenders")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Sessionize, filter and split a raw interaction log.
    Prepare {
        /// `user<TAB>item<TAB>unix_seconds` file (overrides data.input).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Generate the planted synthetic dataset.
    Synth,
    /// Fit the recommender on the training split.
    TrainRec,
    /// Train the explanation policy.
    TrainExplainer,
    /// Explain sessions with the trained policy.
    Explain,
    /// Exhaustively verify explanations on short sessions.
    Oracle,
    /// Explanation and ranking metrics, with the random baseline.
    Eval,
    /// Contrastive fine-tuning with the explanations.
    Finetune,
    /// Merge metric files into report.csv.
    Report,
    /// Run every stage.
    Pipeline,
}

/// Resolve the configuration (file, `FCESR_*` environment, then flags).
pub fn resolve_config<I>(cli: &Cli, env: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut config = config::load(cli.config.as_deref(), env)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = Some(workers);
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Command::Prepare { input: Some(input) } = &cli.command {
        config.data.input = Some(input.clone());
    }
    config.validate()?;
    Ok(config)
}

pub fn run_command(command: &Command, ctx: &Ctx) -> Result<(), CliError> {
    match command {
        Command::Prepare { .. } => stages::prepare(ctx),
        Command::Synth => stages::synth(ctx),
        Command::TrainRec => stages::train_rec(ctx),
        Command::TrainExplainer => stages::train_explainer_stage(ctx),
        Command::Explain => stages::explain(ctx),
        Command::Oracle => stages::oracle(ctx),
        Command::Eval => stages::eval(ctx),
        Command::Finetune => stages::finetune_stage(ctx),
        Command::Report => stages::report(ctx),
        Command::Pipeline => stages::pipeline(ctx),
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = resolve_config(cli, std::env::vars())?;
    run_command(&cli.command, &Ctx::new(config))
}
