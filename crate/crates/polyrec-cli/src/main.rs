//! `polyrec` command line: synth -> ingest -> train -> eval / recommend /
//! export, all driven by one TOML config plus flag overrides.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use polyrec::dataset::Split;

use config::{FileConfig, RunConfig, TrainSection};

#[derive(Parser)]
#[command(name = "polyrec", version, about = "Two-stage polymer recommendation over dual-modality embeddings")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Working directory holding dataset/, models/ and exports/.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Base seed; stages derive their own seeds from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Architecture: early | gated | mmoe.
    #[arg(long, global = true)]
    arch: Option<String>,
    /// Modality selection: lang | graph | both.
    #[arg(long, global = true)]
    modality: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct TrainFlags {
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (manifest + embedding files + ground truth).
    Synth {
        /// Number of records.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Label noise standard deviation.
        #[arg(long, default_value_t = 0.2294)]
        noise: f64,
        /// Per-task missing-label rates `tg,tm,eg`.
        #[arg(long, default_value = "0,0,0", value_parser = parse_missing)]
        missing: MissingRates,
        /// Fraction of signal shared across the three tasks, in [0,1).
        #[arg(long, default_value_t = 0.5)]
        shared_frac: f64,
        /// Output directory (default `<workdir>/synth`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate inputs and persist the dataset bundle (split + stats).
    Ingest {
        /// JSONL manifest path.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Language embedding file (binary or CSV).
        #[arg(long)]
        lang: Option<PathBuf>,
        /// Graph embedding file (binary or CSV).
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Train the configured architecture on the ingested bundle.
    Train {
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        /// Checkpoint path (default `<workdir>/models/<arch>.ckpt`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split to evaluate: train | val | test.
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
    },
    /// Retrieve and rank candidates for a query polymer.
    Recommend {
        /// Query record id.
        #[arg(long)]
        query: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Stage-1 candidate count.
        #[arg(long)]
        k_retrieve: Option<usize>,
        /// Final ranked list length.
        #[arg(long)]
        k_final: Option<usize>,
        /// Properties compared by the ranking score, e.g. `tg,eg`.
        #[arg(long)]
        properties: Option<String>,
    },
    /// Export embeddings + predictions as CSV for external projection.
    Export {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug)]
struct MissingRates([f64; 3]);

fn parse_missing(s: &str) -> Result<MissingRates, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated rates, e.g. 0,0.708,0.728".into());
    }
    let mut rates = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        rates[i] = p.trim().parse::<f64>().map_err(|e| format!("bad rate `{p}`: {e}"))?;
    }
    Ok(MissingRates(rates))
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split `{s}` (train|val|test)"))
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };

    let (train_flags, ingest_paths) = match &cli.command {
        Command::Train { train } => (
            TrainSection {
                batch_size: train.batch_size,
                lr: train.lr,
                weight_decay: train.weight_decay,
                epochs: train.epochs,
                dropout: train.dropout,
            },
            None,
        ),
        Command::Ingest { manifest, lang, graph } => {
            (TrainSection::default(), Some((manifest.clone(), lang.clone(), graph.clone())))
        }
        _ => (TrainSection::default(), None),
    };
    let (k_retrieve, k_final, properties) = match &cli.command {
        Command::Recommend { k_retrieve, k_final, properties, .. } => {
            (*k_retrieve, *k_final, properties.clone())
        }
        _ => (None, None, None),
    };

    let mut config = RunConfig::resolve(
        file,
        cli.seed,
        cli.workdir,
        cli.arch,
        cli.modality,
        train_flags,
        k_retrieve,
        k_final,
        properties,
    )?;
    if let Some((manifest, lang, graph)) = ingest_paths {
        config.manifest = manifest.or(config.manifest);
        config.lang_embeddings = lang.or(config.lang_embeddings);
        config.graph_embeddings = graph.or(config.graph_embeddings);
    }

    match cli.command {
        Command::Synth { n, noise, missing, shared_frac, out } => {
            commands::cmd_synth(&config, n, noise, missing.0, shared_frac, out)
        }
        Command::Ingest { .. } => commands::cmd_ingest(&config),
        Command::Train { .. } => commands::cmd_train(&config),
        Command::Eval { checkpoint, split } => {
            let ckpt = checkpoint.unwrap_or_else(|| commands::default_checkpoint(&config));
            commands::cmd_eval(&config, &ckpt, split)
        }
        Command::Recommend { query, checkpoint, .. } => {
            let ckpt = checkpoint.unwrap_or_else(|| commands::default_checkpoint(&config));
            commands::cmd_recommend(&config, &ckpt, &query)
        }
        Command::Export { checkpoint } => {
            let ckpt = checkpoint.unwrap_or_else(|| commands::default_checkpoint(&config));
            commands::cmd_export(&config, &ckpt)
        }
    }
    .context("command failed")
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
