//! `regent`: index a collection, build entity sets, train and apply the
//! re-ranker, and evaluate the results.

mod attention;
mod commands;
mod config;
mod failure;
mod pipeline;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Overrides};
use failure::Failure;

#[derive(Parser)]
#[command(name = "regent", version, about = "Entity-aware neural re-ranking workbench")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(short, long, global = true, default_value = "regent.toml")]
    config: PathBuf,
    /// Override a configuration value, e.g. `--set training.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory; beats the config file and REGENT_OUTPUT_DIR.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fusion kind, e.g. `learned_sigmoid`.
    #[arg(long, global = true)]
    fusion: Option<String>,
    /// Ablation variant: full, no_entities, no_bm25 or document_level_bm25.
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Entity scorer kind, e.g. `max_sim`.
    #[arg(long, global = true)]
    scorer: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the BM25 index, vocabulary, candidate run and fold plan.
    Index,
    /// Score candidate entities and write per-query entity sets.
    EntitySets,
    /// Train the per-fold entity scorers.
    TrainEntityRanker,
    /// Train one re-ranker per fold.
    Train,
    /// Re-rank the BM25 candidates with out-of-fold checkpoints.
    Rerank,
    /// Metrics report for a run.
    Evaluate {
        /// Run to evaluate; defaults to the re-ranked run.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Sweep variants, fusion kinds and entity scorers.
    Ablate,
    /// Attention weights of one query-document pair.
    AttentionDump {
        #[arg(long)]
        query: String,
        #[arg(long)]
        doc: String,
    },
}

fn overrides(c: &Common) -> Overrides {
    let mut set = c.set.clone();
    let quoted = |v: &str| format!("\"{}\"", v.replace('\\', "\\\\").replace('"', "\\\""));
    if let Some(f) = &c.fusion {
        set.push(format!("model.fusion={}", quoted(f)));
    }
    if let Some(v) = &c.variant {
        set.push(format!("model.variant={}", quoted(v)));
    }
    if let Some(s) = &c.scorer {
        set.push(format!("pipeline.entity_scorer={}", quoted(s)));
    }
    if let Some(e) = c.epochs {
        set.push(format!("training.epochs={e}"));
    }
    if let Some(lr) = c.lr {
        set.push(format!("training.lr={lr:e}"));
    }
    Overrides { set, output_dir: c.output_dir.clone(), seed: c.seed }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = ExperimentConfig::load(&cli.common.config, &overrides(&cli.common))?;
    match cli.command {
        Command::Index => commands::cmd_index(&config),
        Command::EntitySets => commands::cmd_entity_sets(&config),
        Command::TrainEntityRanker => commands::cmd_train_entity_ranker(&config),
        Command::Train => commands::cmd_train(&config),
        Command::Rerank => commands::cmd_rerank(&config),
        Command::Evaluate { run } => commands::cmd_evaluate(&config, run),
        Command::Ablate => commands::cmd_ablate(&config),
        Command::AttentionDump { query, doc } => commands::cmd_attention_dump(&config, &query, &doc),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
