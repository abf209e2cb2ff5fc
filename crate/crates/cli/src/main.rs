use std::path::PathBuf;
use std::process::ExitCode;

use aoa_cli::commands::SynthTask;
use aoa_cli::rerank_weights;
use aoa_cli::*;
use clap::{Args, Parser, Subcommand};

/// Attention-over-attention cloze reader with n-best re-ranking.
#[derive(Parser)]
#[command(name = "aoa", version)]
struct Cli {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set model.hidden_dim=16`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Log progress (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Use the `ensemble_size` models from `train --ensemble`.
    #[arg(long, conflicts_with = "checkpoint")]
    ensemble: bool,
    /// Explicit checkpoints; several are averaged.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
}

impl ModelArgs {
    fn models(&self) -> Models {
        if self.ensemble {
            Models::Ensemble
        } else if !self.checkpoint.is_empty() {
            Models::Paths(self.checkpoint.clone())
        } else {
            Models::Single
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse the data splits, build the vocabulary, print statistics.
    Prepare,
    /// Train the reader (or an ensemble) and keep the best checkpoint.
    Train {
        #[arg(long)]
        ensemble: bool,
    },
    /// Accuracy with length and answer-frequency breakdowns.
    Eval {
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        models: ModelArgs,
    },
    /// Write the reader's n-best candidates per sample.
    Nbest {
        #[arg(long, default_value = "valid")]
        split: String,
        #[command(flatten)]
        models: ModelArgs,
    },
    /// Train the global n-gram model on the training documents.
    TrainLm {
        /// Also write an ARPA text export.
        #[arg(long)]
        arpa: bool,
    },
    /// Cluster words into classes and train the class n-gram model.
    Cluster,
    /// Tune feature weights on n-best lists.
    Tune {
        #[arg(long, default_value = "valid")]
        split: String,
    },
    /// Re-rank n-best lists and report accuracy and the feature ratio.
    Rerank {
        #[arg(long, default_value = "test")]
        split: String,
        /// Four comma-separated weights: nn,global,local,class.
        #[arg(long)]
        weights: Option<String>,
    },
    /// Generate a synthetic corpus in the generic format.
    Synth {
        #[arg(long, value_enum, default_value = "copy")]
        task: SynthTask,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fmt_eta(eta: Option<f64>) -> String {
    eta.map_or("undefined".into(), |e| format!("{e:.4}"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Synth { task, samples, seed, out } = &cli.command {
        cmd_synth(*task, *samples, *seed, out)?;
        println!("wrote {samples} samples to {}", out.display());
        return Ok(());
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Prepare => {
            let summary = cmd_prepare(&cfg)?;
            println!("vocabulary {}", summary.vocabulary);
            println!("{:<6} {:>8} {:>8} {:>9} {:>10} {:>7}", "split", "queries", "max cand", "avg cand", "avg tokens", "types");
            for s in &summary.splits {
                let st = &s.stats;
                println!(
                    "{:<6} {:>8} {:>8} {:>9.2} {:>10.1} {:>7}",
                    s.split, st.queries, st.max_candidates, st.avg_candidates, st.avg_tokens, st.vocabulary_size
                );
            }
        }
        Command::Train { ensemble } => {
            for (i, log) in cmd_train(&cfg, ensemble)?.iter().enumerate() {
                let last = log.epochs.last();
                println!(
                    "model {i}: {} epochs, best epoch {}, best valid accuracy {}, final loss {}",
                    log.epochs.len(),
                    log.best_epoch.map_or("-".into(), |e| e.to_string()),
                    log.best_valid_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                    last.map_or("-".into(), |e| format!("{:.4}", e.mean_loss)),
                );
            }
        }
        Command::Eval { split, models } => {
            let r = cmd_eval(&cfg, &split, &models.models())?;
            println!("{split} accuracy {:.4} ({}/{}, {} dropped)", r.accuracy, r.correct, r.evaluated, r.dropped_empty_document);
        }
        Command::Nbest { split, models } => {
            let lists = cmd_nbest(&cfg, &split, &models.models())?;
            println!("wrote {} n-best lists for {split}", lists.len());
        }
        Command::TrainLm { arpa } => {
            let lm = cmd_train_lm(&cfg, arpa)?;
            println!("global LM: order {}, vocabulary {}", lm.order(), lm.vocab_size());
        }
        Command::Cluster => {
            let c = cmd_cluster(&cfg)?;
            println!(
                "{} words in {} classes, log-likelihood {:.4} after {} passes",
                c.map.classes.len(),
                c.map.used_classes(),
                c.objective.last().copied().unwrap_or(f64::NAN),
                c.moves.len()
            );
        }
        Command::Tune { split } => {
            let r = cmd_tune(&cfg, &split)?;
            let w = r.normalized;
            println!(
                "weights (normalised) nn {:.4} global {:.4} local {:.4} class {:.4}; eta {}; {} accuracy {:.4} -> {:.4}",
                w.nn,
                w.global_lm,
                w.local_lm,
                w.class_lm,
                fmt_eta(r.eta),
                split,
                r.accuracy_before,
                r.accuracy_after
            );
        }
        Command::Rerank { split, weights } => {
            let weights = weights.as_deref().map(rerank_weights).transpose()?;
            let r = cmd_rerank(&cfg, &split, weights)?;
            println!("{split} accuracy {:.4} (reader {:.4}), eta {}", r.accuracy, r.reader_accuracy, fmt_eta(r.eta));
        }
        Command::Synth { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
