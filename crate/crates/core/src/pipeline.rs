//! The command pipeline: synth → preprocess → train → predict → track →
//! evaluate. Every stage reads and writes files under the run's output
//! directory so each boundary can be inspected.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{mark_seen_services, Dialogue, SchemaSet, ServiceRegistry, ServiceSchema};
use crate::error::{Error, Result};
use crate::metrics::{align_frames, MetricsReport};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, NluModel};
use crate::normalize::normalize_schema_names;
use crate::predict::{
    predict_dialogues, ModelPredictor, OraclePredictor, TurnPredictions, TurnPredictor,
};
use crate::qa::{
    balance_status_examples, build_dialogue_examples, BuildStats, ExampleConfig, QAExample,
    TaskStats, FIELD_SEPARATOR,
};
use crate::sgd_json::{load_dialogues, load_schemas, read_jsonl, write_jsonl};
use crate::synth::generate;
use crate::tokenizer::{Tokenizer, Vocab, VocabBuilder, WordPiece};
use crate::tracker::{state_rows, track_from_predictions, StateRow};
use crate::train::{train, TrainReport};

/// Schemas and dialogues of one split.
pub struct Split {
    pub schemas: SchemaSet,
    pub dialogues: Vec<Dialogue>,
}

pub fn load_split(dir: &Path) -> Result<Split> {
    if !dir.exists() {
        return Err(Error::Input(format!(
            "split directory {} does not exist; run `schema-dst synth` or point --data-dir at an SGD-format corpus",
            dir.display()
        )));
    }
    let schemas = SchemaSet::new(load_schemas(dir)?)?;
    let dialogues = load_dialogues(dir, &schemas)?;
    Ok(Split { schemas, dialogues })
}

/// Vocabulary over utterances and schema texts, plus the field separator.
pub fn build_vocab(
    dialogues: &[Dialogue],
    schemas: &[ServiceSchema],
    min_word_count: usize,
    lowercase: bool,
    normalize_names: bool,
) -> Vocab {
    let mut b = VocabBuilder::new(min_word_count, lowercase);
    b.add_text(FIELD_SEPARATOR);
    for schema in schemas {
        let schema = normalize_schema_names(schema, normalize_names);
        b.add_text(&schema.description);
        for i in &schema.intents {
            b.add_text(i.input_name());
            b.add_text(&i.description);
        }
        for s in &schema.slots {
            b.add_text(s.input_name());
            b.add_text(&s.description);
            for v in &s.possible_values {
                b.add_text(v);
            }
        }
    }
    for d in dialogues {
        for t in &d.turns {
            b.add_text(&t.system_utterance);
            b.add_text(&t.user_utterance);
        }
    }
    b.build()
}

/// Examples of every dialogue, balanced when the config asks for it.
pub fn make_examples(
    dialogues: &[Dialogue],
    schemas: &SchemaSet,
    tokenizer: &dyn Tokenizer,
    config: &ExampleConfig,
) -> Result<(Vec<QAExample>, BuildStats)> {
    let mut stats = BuildStats::default();
    let mut out = Vec::new();
    for d in dialogues {
        out.extend(build_dialogue_examples(
            d, schemas, tokenizer, config, &mut stats,
        )?);
    }
    if config.balance {
        out = balance_status_examples(out, config.seed);
    }
    Ok((out, stats))
}

pub fn new_model(config: &ModelConfig, tokenizer: &WordPiece) -> Result<NluModel> {
    let mut config = config.clone();
    config.encoder.vocab_size = tokenizer.vocab_size();
    NluModel::new(config, tokenizer.special_ids().pad)
}

/// Runs `predictor` over `dialogues`, tracks the states and scores them.
pub fn evaluate_dialogues(
    dialogues: &[Dialogue],
    schemas: &SchemaSet,
    registry: &ServiceRegistry,
    predictor: &dyn TurnPredictor,
    config: &RunConfig,
) -> Result<(Vec<StateRow>, MetricsReport)> {
    let preds = predict_dialogues(dialogues, schemas, predictor, config.workers)?;
    let states = track_from_predictions(dialogues, &preds, schemas, &config.tracker)?;
    let rows = state_rows(dialogues, &states)?;
    let frames = align_frames(dialogues, &rows, schemas, registry)?;
    Ok((rows, MetricsReport::compute(&frames, config.match_mode)))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Consistency(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn require_file(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "{} not found; {hint}",
            path.display()
        )))
    }
}

pub fn cmd_synth(config: &RunConfig) -> Result<PathBuf> {
    config.write_resolved("synth")?;
    let corpus = generate(&config.synth)?;
    corpus.write(&config.data_dir)?;
    log::info!(
        "wrote {} train and {} dev dialogues to {}",
        corpus.train.len(),
        corpus.dev.len(),
        config.data_dir.display()
    );
    Ok(config.data_dir.clone())
}

/// Loads the run's vocabulary, building it from the training split first if
/// it does not exist yet.
pub fn load_or_build_tokenizer(config: &RunConfig) -> Result<WordPiece> {
    let path = config.vocab_path();
    if !path.exists() {
        let train = load_split(&config.split_dir("train"))?;
        let vocab = build_vocab(
            &train.dialogues,
            &train.schemas.to_vec(),
            config.tokenizer.min_word_count,
            config.tokenizer.lowercase,
            config.examples.normalize_names,
        );
        if let Some(parent) = path.parent() {
            ensure_dir(parent)?;
        }
        vocab.save(&path)?;
    }
    Ok(WordPiece::new(
        Vocab::load(&path)?,
        config.tokenizer.lowercase,
    ))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub split: String,
    pub balanced: bool,
    pub build: BuildStats,
    pub stats: serde_json::Value,
    pub task_ratios: String,
    pub negative_ratios: String,
}

pub fn examples_path(config: &RunConfig, split: &str) -> PathBuf {
    config.output_dir.join(format!("{split}_examples.jsonl"))
}

pub fn cmd_preprocess(config: &RunConfig, split: &str) -> Result<PreprocessReport> {
    config.write_resolved("preprocess")?;
    let data = load_split(&config.split_dir(split))?;
    let tokenizer = load_or_build_tokenizer(config)?;
    // Balancing shapes the training distribution only; other splits keep
    // every example so the dev loss reflects the real task mix.
    let options = ExampleConfig {
        balance: config.examples.balance && split == "train",
        ..config.examples.clone()
    };
    let (examples, build) = make_examples(&data.dialogues, &data.schemas, &tokenizer, &options)?;
    write_jsonl(&examples_path(config, split), &examples)?;
    let stats = TaskStats::from_examples(&examples);
    let report = PreprocessReport {
        split: split.to_string(),
        balanced: options.balance,
        build,
        stats: stats.to_json(),
        task_ratios: TaskStats::ratio_string(&stats.task_ratios()),
        negative_ratios: TaskStats::ratio_string(&stats.negative_ratios()),
    };
    write_json(
        &config.output_dir.join(format!("{split}_stats.json")),
        &report,
    )?;
    Ok(report)
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainReport> {
    config.write_resolved("train")?;
    let mut sets = Vec::new();
    for split in ["train", "dev"] {
        let path = examples_path(config, split);
        if !path.exists() {
            cmd_preprocess(config, split)?;
        }
        sets.push(read_jsonl::<QAExample>(&path)?);
    }
    let tokenizer = load_or_build_tokenizer(config)?;
    let model = new_model(&config.model, &tokenizer)?;
    log::info!(
        "training on {} examples ({} dev), {} parameters",
        sets[0].len(),
        sets[1].len(),
        model.num_parameters()
    );
    let log_path = config.output_dir.join("train_log.jsonl");
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut w = BufWriter::new(file);
    let report = train(&model, &config.train, &sets[0], &sets[1], Some(&mut w))?;
    w.flush().map_err(|e| Error::io(&log_path, e))?;
    save_checkpoint(&config.checkpoint_dir(), &model, &tokenizer)?;
    write_json(
        &config.output_dir.join("train_report.json"),
        &serde_json::json!({
            "epochs": report.epochs,
            "best_epoch": report.best_epoch,
            "best_dev_loss": report.best_dev_loss,
            "steps": report.steps.len(),
        }),
    )?;
    Ok(report)
}

pub fn predictions_path(config: &RunConfig, split: &str) -> PathBuf {
    config.output_dir.join(format!("{split}_predictions.jsonl"))
}

pub fn states_path(config: &RunConfig, split: &str) -> PathBuf {
    config.output_dir.join(format!("{split}_states.jsonl"))
}

/// With `oracle`, predictions come from the gold labels instead of a model.
pub fn cmd_predict(config: &RunConfig, split: &str, oracle: bool) -> Result<Vec<TurnPredictions>> {
    config.write_resolved("predict")?;
    let data = load_split(&config.split_dir(split))?;
    let preds = if oracle {
        let tokenizer = load_or_build_tokenizer(config)?;
        let p = OraclePredictor {
            tokenizer: &tokenizer,
            max_seq_len: config.examples.max_seq_len,
            normalize_names: config.examples.normalize_names,
        };
        predict_dialogues(&data.dialogues, &data.schemas, &p, config.workers)?
    } else {
        let dir = config.checkpoint_dir();
        require_file(
            &dir.join("manifest.json"),
            "train a model first with `schema-dst train` or pass --checkpoint",
        )?;
        let (model, tokenizer) = load_checkpoint(&dir)?;
        let p = ModelPredictor {
            model: &model,
            tokenizer: &tokenizer,
            options: config.predict.clone(),
        };
        predict_dialogues(&data.dialogues, &data.schemas, &p, config.workers)?
    };
    write_jsonl(&predictions_path(config, split), &preds)?;
    Ok(preds)
}

pub fn cmd_track(config: &RunConfig, split: &str) -> Result<Vec<StateRow>> {
    config.write_resolved("track")?;
    let data = load_split(&config.split_dir(split))?;
    let path = predictions_path(config, split);
    require_file(&path, "run `schema-dst predict` first")?;
    let preds: Vec<TurnPredictions> = read_jsonl(&path)?;
    let states = track_from_predictions(&data.dialogues, &preds, &data.schemas, &config.tracker)?;
    let rows = state_rows(&data.dialogues, &states)?;
    write_jsonl(&states_path(config, split), &rows)?;
    Ok(rows)
}

pub fn cmd_evaluate(config: &RunConfig, split: &str) -> Result<MetricsReport> {
    config.write_resolved("evaluate")?;
    let data = load_split(&config.split_dir(split))?;
    let train_schemas = load_schemas(&config.split_dir("train"))?;
    let registry = mark_seen_services(&train_schemas, &data.schemas.to_vec());
    let path = states_path(config, split);
    require_file(&path, "run `schema-dst track` first")?;
    let rows: Vec<StateRow> = read_jsonl(&path)?;
    let frames = align_frames(&data.dialogues, &rows, &data.schemas, &registry)?;
    let report = MetricsReport::compute(&frames, config.match_mode);
    write_json(
        &config.output_dir.join(format!("{split}_metrics.json")),
        &report,
    )?;
    let table = config.output_dir.join(format!("{split}_metrics.txt"));
    fs::write(&table, report.to_string()).map_err(|e| Error::io(&table, e))?;
    Ok(report)
}
