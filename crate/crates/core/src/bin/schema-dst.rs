use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use schema_dst::config::RunConfig;
use schema_dst::metrics::MatchMode;
use schema_dst::pipeline;
use schema_dst::Error;

/// Schema-guided dialogue state tracking with a multi-pass QA model.
///
/// Typical run: synth → preprocess → train → predict → track → evaluate.
/// Every command writes its resolved configuration to
/// `<output-dir>/<command>.config.toml`.
///
/// Exit codes: 0 success, 2 usage error (bad flags, missing inputs),
/// 3 validation error (malformed data or config), 1 runtime failure.
#[derive(Parser)]
#[command(name = "schema-dst", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Corpus root with `train/` and `dev/` in the SGD layout.
    #[arg(long, global = true, env = "SCHEMA_DST_DATA")]
    data_dir: Option<PathBuf>,
    /// Directory for examples, logs, predictions, states and reports.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Checkpoint directory (default `<output-dir>/checkpoint`).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Master seed, copied into every seeded stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Inference worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Cap negative STATUS examples per (service, slot) at the positive count.
    #[arg(long, global = true, overrides_with = "no_balance")]
    balance: bool,
    #[arg(long, global = true, overrides_with = "balance")]
    no_balance: bool,
    /// Split camelCase/snake_case schema names into words in model inputs.
    #[arg(long, global = true)]
    normalize_names: bool,
    /// Use token-F1 matching for free-form values as the primary metric mode.
    #[arg(long, global = true)]
    fuzzy_match: bool,
    #[arg(long, global = true)]
    max_seq_len: Option<usize>,
    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into the data directory.
    Synth,
    /// Build QA examples and the task statistics report for a split.
    Preprocess {
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Train the model on the train split, selecting by dev loss.
    Train,
    /// Write per-turn head predictions for a split.
    Predict {
        #[arg(long, default_value = "dev")]
        split: String,
        /// Predict the gold labels instead of running the model.
        #[arg(long)]
        oracle: bool,
    },
    /// Fold predictions into dialogue states.
    Track {
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// Score tracked states against the gold annotations.
    Evaluate {
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// Print the resolved configuration.
    Config,
}

fn resolve(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &c.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(d) = &c.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(d) = &c.checkpoint {
        cfg.checkpoint = Some(d.clone());
    }
    let seed = c.seed.unwrap_or(cfg.seed);
    cfg.set_seed(seed);
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if c.balance {
        cfg.examples.balance = true;
    }
    if c.no_balance {
        cfg.examples.balance = false;
    }
    if c.normalize_names {
        cfg.examples.normalize_names = true;
    }
    if c.fuzzy_match {
        cfg.match_mode = MatchMode::Fuzzy;
    }
    if let Some(n) = c.max_seq_len {
        cfg.examples.max_seq_len = n;
    }
    cfg.sync();
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = resolve(&cli.common)?;
    match &cli.command {
        Command::Synth => {
            let dir = pipeline::cmd_synth(&cfg)?;
            println!("corpus written to {}", dir.display());
        }
        Command::Preprocess { split } => {
            let r = pipeline::cmd_preprocess(&cfg, split)?;
            println!(
                "{split}: {} examples ({} dropped as unbuildable, {} spans lost to truncation)",
                r.build.built, r.build.dropped_unbuildable, r.build.truncated_spans
            );
            println!(
                "task ratios (intent:requested:status:cat value:span) {}",
                r.task_ratios
            );
            println!(
                "negative ratios                                     {}",
                r.negative_ratios
            );
        }
        Command::Train => {
            let r = pipeline::cmd_train(&cfg)?;
            for e in &r.epochs {
                println!(
                    "epoch {}: train loss {:.4}, dev loss {}",
                    e.epoch,
                    e.train_loss,
                    e.dev_loss.map_or("n/a".into(), |d| format!("{d:.4}"))
                );
            }
            println!("checkpoint saved to {}", cfg.checkpoint_dir().display());
        }
        Command::Predict { split, oracle } => {
            let p = pipeline::cmd_predict(&cfg, split, *oracle)?;
            println!(
                "{} frame predictions written to {}",
                p.len(),
                pipeline::predictions_path(&cfg, split).display()
            );
        }
        Command::Track { split } => {
            let rows = pipeline::cmd_track(&cfg, split)?;
            println!(
                "{} states written to {}",
                rows.len(),
                pipeline::states_path(&cfg, split).display()
            );
        }
        Command::Evaluate { split } => {
            let r = pipeline::cmd_evaluate(&cfg, split)?;
            print!("{r}");
        }
        Command::Config => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.common.log)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                Error::Input(_) | Error::Io { .. } => 2,
                e if e.is_validation() => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
