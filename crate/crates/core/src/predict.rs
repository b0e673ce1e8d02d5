//! Per-turn inference: run every query of a turn through the model and
//! collect the head scores keyed by schema element.
//!
//! Queries of a turn are conditionally independent, so they can be split
//! into any number of batches, and dialogues can be processed on several
//! worker threads, without changing the result.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    char_slice, Dialogue, DialogueTurn, FrameAnnotation, SchemaSet, ServiceSchema, UtteranceRole,
};
use crate::error::{Error, Result};
use crate::model::{probabilities, NluModel};
use crate::normalize::normalize_schema_names;
use crate::qa::{
    build_examples, BuildStats, LabelPayload, OffsetMap, QAExample, SlotStatus, TaskKind,
};
use crate::tokenizer::Tokenizer;
use crate::tracker::decode_span;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub score: f64,
    /// Decoded value; `None` for the `(0, 0)` no-span answer.
    pub text: Option<String>,
}

impl SpanPrediction {
    pub fn none() -> Self {
        Self {
            start: 0,
            end: 0,
            score: 0.0,
            text: None,
        }
    }
}

/// Scores of all five heads for one service in one turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnPredictions {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub service: String,
    /// Probability that each intent is active.
    pub intents: BTreeMap<String, f64>,
    /// Probability that each slot is requested.
    pub requested: BTreeMap<String, f64>,
    /// none / dontcare / active probabilities per slot.
    pub status: BTreeMap<String, [f64; 3]>,
    /// Probability of each categorical value per slot.
    pub cat_values: BTreeMap<String, BTreeMap<String, f64>>,
    pub spans: BTreeMap<String, SpanPrediction>,
}

impl TurnPredictions {
    pub fn empty(dialogue_id: &str, turn_index: usize, service: &str) -> Self {
        Self {
            dialogue_id: dialogue_id.to_string(),
            turn_index,
            service: service.to_string(),
            intents: BTreeMap::new(),
            requested: BTreeMap::new(),
            status: BTreeMap::new(),
            cat_values: BTreeMap::new(),
            spans: BTreeMap::new(),
        }
    }

    /// Neutral scores for every schema element; used for elements whose
    /// example could not be built.
    fn defaults(turn: &DialogueTurn, schema: &ServiceSchema) -> Self {
        let mut p = Self::empty(&turn.dialogue_id, turn.turn_index, &schema.service_name);
        for i in &schema.intents {
            p.intents.insert(i.name.clone(), 0.0);
        }
        for s in &schema.slots {
            p.requested.insert(s.name.clone(), 0.0);
            p.status.insert(s.name.clone(), [1.0, 0.0, 0.0]);
            if s.is_categorical {
                p.cat_values.insert(
                    s.name.clone(),
                    s.possible_values.iter().map(|v| (v.clone(), 0.0)).collect(),
                );
            } else {
                p.spans.insert(s.name.clone(), SpanPrediction::none());
            }
        }
        p
    }

    /// Checks that predictions cover exactly the elements of `schema`.
    pub fn check_coverage(&self, schema: &ServiceSchema) -> Result<()> {
        let err = |what: &str| {
            Err(Error::Consistency(format!(
                "predictions for {} turn {} service {}: {what} do not match the schema",
                self.dialogue_id, self.turn_index, self.service
            )))
        };
        let intents: Vec<&String> = schema.intents.iter().map(|i| &i.name).collect();
        if !same_keys(self.intents.keys(), intents.iter().copied()) {
            return err("intents");
        }
        let slots: Vec<&String> = schema.slots.iter().map(|s| &s.name).collect();
        if !same_keys(self.requested.keys(), slots.iter().copied()) {
            return err("requested slots");
        }
        if !same_keys(self.status.keys(), slots.iter().copied()) {
            return err("slot statuses");
        }
        if !same_keys(
            self.cat_values.keys(),
            schema.categorical_slots().map(|s| &s.name),
        ) {
            return err("categorical slots");
        }
        for slot in schema.categorical_slots() {
            if !same_keys(
                self.cat_values[&slot.name].keys(),
                slot.possible_values.iter(),
            ) {
                return err("categorical values");
            }
        }
        if !same_keys(self.spans.keys(), schema.free_form_slots().map(|s| &s.name)) {
            return err("span slots");
        }
        Ok(())
    }
}

fn same_keys<'a>(a: impl Iterator<Item = &'a String>, b: impl Iterator<Item = &'a String>) -> bool {
    let mut a: Vec<&String> = a.collect();
    let mut b: Vec<&String> = b.collect();
    a.sort();
    b.sort();
    a == b
}

/// Text covered by input tokens `start..=end`, sliced from the utterances.
pub fn span_text(
    turn: &DialogueTurn,
    offsets: &OffsetMap,
    start: usize,
    end: usize,
) -> Option<String> {
    let a = offsets.origin(start)?;
    let b = offsets.origin(end)?;
    if a.role == b.role {
        return Some(char_slice(turn.utterance(a.role), a.start_char, b.end_char).to_string());
    }
    let sys = &turn.system_utterance;
    let sys_tail = char_slice(sys, a.start_char, sys.chars().count());
    let usr_head = char_slice(turn.utterance(UtteranceRole::User), 0, b.end_char);
    Some(format!("{sys_tail} {usr_head}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictOptions {
    pub max_seq_len: usize,
    pub batch_size: usize,
    pub max_answer_len: usize,
    pub normalize_names: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            max_seq_len: 128,
            batch_size: 64,
            max_answer_len: 30,
            normalize_names: false,
        }
    }
}

fn insert_example_scores(
    preds: &mut TurnPredictions,
    ex: &QAExample,
    probs: &[f64],
    span: Option<SpanPrediction>,
) -> Result<()> {
    let el = &ex.keys.element;
    let missing = || {
        Error::Consistency(format!(
            "prediction for unknown element {el} of {}",
            preds.service
        ))
    };
    match ex.task {
        TaskKind::Intent => *preds.intents.get_mut(el).ok_or_else(missing)? = probs[1],
        TaskKind::Requested => *preds.requested.get_mut(el).ok_or_else(missing)? = probs[1],
        TaskKind::Status => {
            *preds.status.get_mut(el).ok_or_else(missing)? = [probs[0], probs[1], probs[2]]
        }
        TaskKind::CatValue => {
            let value = ex.keys.value.as_ref().ok_or_else(missing)?;
            *preds
                .cat_values
                .get_mut(el)
                .and_then(|m| m.get_mut(value))
                .ok_or_else(missing)? = probs[1];
        }
        TaskKind::Span => {
            *preds.spans.get_mut(el).ok_or_else(missing)? =
                span.unwrap_or_else(SpanPrediction::none)
        }
    }
    Ok(())
}

/// Runs every query of one turn for one service.
pub fn predict_turn(
    turn: &DialogueTurn,
    schema: &ServiceSchema,
    model: &NluModel,
    tokenizer: &dyn Tokenizer,
    opts: &PredictOptions,
) -> Result<TurnPredictions> {
    let schema = normalize_schema_names(schema, opts.normalize_names);
    let mut stats = BuildStats::default();
    let examples = build_examples(
        turn,
        &schema,
        None,
        None,
        tokenizer,
        opts.max_seq_len,
        &mut stats,
    )?;
    let mut preds = TurnPredictions::defaults(turn, &schema);
    for chunk in examples.chunks(opts.batch_size.max(1)) {
        let refs: Vec<&QAExample> = chunk.iter().collect();
        let batch = model.batch(&refs, None)?;
        let out = model.forward(&batch, None)?;
        let intent = probabilities(&out.intent)?;
        let requested = probabilities(&out.requested)?;
        let status = probabilities(&out.status)?;
        let cat = probabilities(&out.cat_value)?;
        let start = out
            .start
            .to_dtype(candle_core::DType::F64)?
            .to_vec2::<f64>()?;
        let end = out
            .end
            .to_dtype(candle_core::DType::F64)?
            .to_vec2::<f64>()?;
        for (row, ex) in chunk.iter().enumerate() {
            let (probs, span) = match ex.task {
                TaskKind::Intent => (&intent[row], None),
                TaskKind::Requested => (&requested[row], None),
                TaskKind::Status => (&status[row], None),
                TaskKind::CatValue => (&cat[row], None),
                TaskKind::Span => {
                    let n = ex.valid_length();
                    let d = decode_span(
                        &start[row][..n],
                        &end[row][..n],
                        ex.seq2_region(),
                        opts.max_answer_len,
                    );
                    let text = if d.is_none() {
                        None
                    } else {
                        span_text(turn, &ex.offsets, d.start, d.end)
                    };
                    (
                        &status[row],
                        Some(SpanPrediction {
                            start: d.start,
                            end: d.end,
                            score: d.score,
                            text,
                        }),
                    )
                }
            };
            insert_example_scores(&mut preds, ex, probs, span)?;
        }
    }
    Ok(preds)
}

/// Predictions built from gold labels: probability 1 on the gold class and
/// the gold span decoded through the same token offsets the model sees.
pub fn oracle_predictions(
    turn: &DialogueTurn,
    schema: &ServiceSchema,
    frame: &FrameAnnotation,
    previous: Option<&BTreeMap<String, Vec<String>>>,
    tokenizer: &dyn Tokenizer,
    max_seq_len: usize,
) -> Result<TurnPredictions> {
    let mut stats = BuildStats::default();
    let examples = build_examples(
        turn,
        schema,
        Some(frame),
        previous,
        tokenizer,
        max_seq_len,
        &mut stats,
    )?;
    let mut preds = TurnPredictions::defaults(turn, schema);
    for ex in &examples {
        let (probs, span): (Vec<f64>, _) = match ex.label {
            LabelPayload::Binary(v) => (vec![1.0 - v as f64, v as f64], None),
            LabelPayload::Status(s) => {
                let mut p = vec![0.0; 3];
                p[s.index()] = 1.0;
                (p, None)
            }
            LabelPayload::Span(a, b) => {
                let span = if (a, b) == (0, 0) {
                    SpanPrediction::none()
                } else {
                    SpanPrediction {
                        start: a,
                        end: b,
                        score: 1.0,
                        text: span_text(turn, &ex.offsets, a, b),
                    }
                };
                (vec![1.0, 0.0, 0.0], Some(span))
            }
        };
        insert_example_scores(&mut preds, ex, &probs, span)?;
    }
    Ok(preds)
}

/// Produces the predictions of every service frame of one turn.
pub trait TurnPredictor: Sync {
    fn predict(
        &self,
        dialogue: &Dialogue,
        turn_pos: usize,
        schemas: &SchemaSet,
    ) -> Result<Vec<TurnPredictions>>;
}

pub struct ModelPredictor<'a> {
    pub model: &'a NluModel,
    pub tokenizer: &'a dyn Tokenizer,
    pub options: PredictOptions,
}

impl TurnPredictor for ModelPredictor<'_> {
    fn predict(
        &self,
        dialogue: &Dialogue,
        turn_pos: usize,
        schemas: &SchemaSet,
    ) -> Result<Vec<TurnPredictions>> {
        let turn = &dialogue.turns[turn_pos];
        turn.frames
            .iter()
            .map(|f| {
                predict_turn(
                    turn,
                    schemas.require(&f.service)?,
                    self.model,
                    self.tokenizer,
                    &self.options,
                )
            })
            .collect()
    }
}

pub struct OraclePredictor<'a> {
    pub tokenizer: &'a dyn Tokenizer,
    pub max_seq_len: usize,
    pub normalize_names: bool,
}

impl TurnPredictor for OraclePredictor<'_> {
    fn predict(
        &self,
        dialogue: &Dialogue,
        turn_pos: usize,
        schemas: &SchemaSet,
    ) -> Result<Vec<TurnPredictions>> {
        let turn = &dialogue.turns[turn_pos];
        turn.frames
            .iter()
            .map(|f| {
                let schema =
                    normalize_schema_names(schemas.require(&f.service)?, self.normalize_names);
                let previous = dialogue.previous_state(turn_pos, &f.service);
                oracle_predictions(turn, &schema, f, previous, self.tokenizer, self.max_seq_len)
            })
            .collect()
    }
}

/// Predictions for every turn and frame of every dialogue, in input order,
/// fanned out over `workers` threads.
pub fn predict_dialogues(
    dialogues: &[Dialogue],
    schemas: &SchemaSet,
    predictor: &dyn TurnPredictor,
    workers: usize,
) -> Result<Vec<TurnPredictions>> {
    let run = || -> Result<Vec<TurnPredictions>> {
        let per_dialogue: Vec<Result<Vec<TurnPredictions>>> = dialogues
            .par_iter()
            .map(|d| {
                let mut out = Vec::new();
                for pos in 0..d.turns.len() {
                    out.extend(predictor.predict(d, pos, schemas)?);
                }
                Ok(out)
            })
            .collect();
        let mut out = Vec::new();
        for r in per_dialogue {
            out.extend(r?);
        }
        Ok(out)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(run)
}

/// Status with the highest probability; ties resolve towards `none`.
pub fn argmax_status(p: &[f64; 3]) -> SlotStatus {
    let mut best = 0;
    for i in 1..3 {
        if p[i] > p[best] {
            best = i;
        }
    }
    SlotStatus::from_index(best)
}
