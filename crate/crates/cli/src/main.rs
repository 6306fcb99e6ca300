//! `crisis`: command-line driver for the disaster tweet classification
//! pipeline. Subcommands mirror the pipeline stages: `preprocess` raw TSV
//! dumps into JSONL, `index` a corpus for retrieval, `train-adapter` for the
//! contrastive embedding adapter, `classify` with any strategy against a
//! live or mock backend, `evaluate` outcomes against gold labels, and
//! `plan-lora` for adapter parameter budgets.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crisis_core::corpus::Split;
use crisis_core::loraplan::ModelDims;
use crisis_core::schema::HumanitarianLabel;
use crisis_core::strategies::StrategyMode;

use commands::BackendFailure;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "crisis",
    version,
    about = "Disaster tweet classification pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize raw TSV label/text files into JSONL splits plus stats.
    Preprocess {
        /// Directory holding all_{train,dev,test}.tsv and event text TSVs.
        #[arg(long)]
        raw_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build the exact inner-product index over a corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        /// Base path for the index file set (.json/.vec/.meta.jsonl).
        #[arg(long)]
        out: PathBuf,
        /// Embed `Label: <label>. Tweet: <tweet>` instead of the raw tweet.
        #[arg(long)]
        enriched: bool,
        #[arg(long, value_parser = ["hashed", "http"], default_value = "hashed")]
        embedder: String,
        #[arg(long, default_value_t = 384)]
        dim: usize,
        /// Linear adapter (JSON) applied on top of the embedder.
        #[arg(long)]
        adapter: Option<PathBuf>,
    },
    /// Train the contrastive linear adapter over frozen base embeddings.
    TrainAdapter {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f64,
        #[arg(long, value_parser = ["hashed", "http"], default_value = "hashed")]
        embedder: String,
        #[arg(long, default_value_t = 384)]
        dim: usize,
    },
    /// Classify a corpus with the configured strategy.
    Classify {
        /// Experiment config (JSON); flags below override its fields.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        mock_script: Option<PathBuf>,
        #[arg(long)]
        in_flight: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Resume: skip as many leading samples as the output already holds.
        #[arg(long)]
        skip_existing: bool,
    },
    /// Score outcomes against gold labels; optionally run the oracle
    /// correction-ceiling analysis.
    Evaluate {
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Oracle relabels (JSONL) for the correction ceiling.
        #[arg(long)]
        relabels: Option<PathBuf>,
        #[arg(long, default_value_t = 15)]
        top_pairs: usize,
        /// Highlight confusion pairs involving this label.
        #[arg(long)]
        focus: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compute trainable-parameter counts for a low-rank adapter config.
    PlanLora {
        #[arg(long, default_value_t = 4096)]
        hidden: u64,
        #[arg(long, default_value_t = 14336)]
        intermediate: u64,
        #[arg(long, default_value_t = 1024)]
        kv_dim: u64,
        #[arg(long, default_value_t = 32)]
        layers: u64,
        #[arg(long, default_value_t = 8_030_261_248)]
        total_params: u64,
        #[arg(long, default_value_t = 64)]
        rank: u64,
        #[arg(long, default_value_t = 128.0)]
        alpha: f64,
        /// Comma-separated target list, or `all`.
        #[arg(long, default_value = "all")]
        targets: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    ZeroShot,
    FewShot,
    RagStandard,
    RagAdaptive,
    RagHybrid,
}

impl From<ModeArg> for StrategyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::ZeroShot => StrategyMode::ZeroShot,
            ModeArg::FewShot => StrategyMode::FewShot,
            ModeArg::RagStandard => StrategyMode::RagStandard,
            ModeArg::RagAdaptive => StrategyMode::RagAdaptive,
            ModeArg::RagHybrid => StrategyMode::RagHybrid,
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<BackendFailure>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Preprocess {
            raw_dir,
            out_dir,
            seed,
        } => commands::preprocess(&raw_dir, &out_dir, seed),
        Command::Index {
            corpus,
            out,
            enriched,
            embedder,
            dim,
            adapter,
        } => {
            let mut config = ExperimentConfig {
                corpus: Some(corpus),
                adapter,
                ..Default::default()
            };
            config.embedder = embedder_config(&embedder, dim);
            commands::index(&config, enriched, &out)
        }
        Command::TrainAdapter {
            corpus,
            out,
            seed,
            steps,
            learning_rate,
            embedder,
            dim,
        } => {
            let mut config = ExperimentConfig {
                corpus: Some(corpus),
                seed,
                ..Default::default()
            };
            config.embedder = embedder_config(&embedder, dim);
            commands::train_adapter_cmd(&config, steps, learning_rate, &out)
        }
        Command::Classify {
            config,
            corpus,
            output,
            mode,
            k,
            tau,
            mock_script,
            in_flight,
            seed,
            skip_existing,
        } => {
            let mut experiment = ExperimentConfig::load(&config)?;
            if let Some(corpus) = corpus {
                experiment.corpus = Some(corpus);
            }
            if let Some(output) = output {
                experiment.output = Some(output);
            }
            if let Some(mode) = mode {
                experiment.strategy.mode = mode.into();
            }
            if let Some(k) = k {
                experiment.strategy.k = k;
            }
            if let Some(tau) = tau {
                experiment.strategy.tau = tau;
            }
            if let Some(script) = mock_script {
                experiment.backend = config::BackendKind::Mock;
                experiment.mock_script = Some(script);
            }
            if let Some(in_flight) = in_flight {
                experiment.in_flight = in_flight;
            }
            if let Some(seed) = seed {
                experiment.seed = seed;
            }
            commands::classify(&experiment, skip_existing)
        }
        Command::Evaluate {
            outcomes,
            gold,
            split,
            relabels,
            top_pairs,
            focus,
            out_dir,
        } => {
            let focus = match focus {
                None => None,
                Some(name) => Some(
                    HumanitarianLabel::from_str_strict(&name)
                        .ok_or_else(|| anyhow::anyhow!("unknown label `{name}`"))?,
                ),
            };
            commands::evaluate(
                &outcomes,
                &gold,
                split,
                relabels.as_deref(),
                top_pairs,
                focus,
                &out_dir,
            )
        }
        Command::PlanLora {
            hidden,
            intermediate,
            kv_dim,
            layers,
            total_params,
            rank,
            alpha,
            targets,
            out,
            seed,
        } => {
            let dims = ModelDims {
                hidden,
                intermediate,
                kv_dim,
                layers,
                total_params,
            };
            commands::plan_lora(dims, rank, alpha, &targets, out.as_deref(), seed)
        }
    }
}

fn embedder_config(kind: &str, dim: usize) -> config::EmbedderConfig {
    let kind = match kind {
        "http" => config::EmbedderKind::Http,
        _ => config::EmbedderKind::Hashed,
    };
    config::EmbedderConfig { kind, dim }
}
