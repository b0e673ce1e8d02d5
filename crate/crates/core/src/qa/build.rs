use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::sequence::{align_span, build_sequence_pair, SequencePair};
use super::{ExampleKeys, LabelPayload, QAExample, SlotStatus, TaskKind};
use crate::data::{
    char_slice, Dialogue, DialogueTurn, FrameAnnotation, SchemaSet, ServiceSchema, UtteranceRole,
    DONTCARE,
};
use crate::error::{Error, Result};
use crate::normalize::normalize_schema_names;
use crate::tokenizer::Tokenizer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExampleConfig {
    pub max_seq_len: usize,
    pub normalize_names: bool,
    pub balance: bool,
    pub seed: u64,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        Self {
            max_seq_len: 128,
            normalize_names: false,
            balance: true,
            seed: 42,
        }
    }
}

/// Counters for examples that could not be built as intended.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub built: usize,
    /// Sequence 1 alone exceeded the budget; the example was dropped.
    pub dropped_unbuildable: usize,
    /// A gold span fell into the truncated tail; the label became `(0, 0)`.
    pub truncated_spans: usize,
}

impl BuildStats {
    pub fn merge(&mut self, other: &BuildStats) {
        self.built += other.built;
        self.dropped_unbuildable += other.dropped_unbuildable;
        self.truncated_spans += other.truncated_spans;
    }
}

type SlotValues = BTreeMap<String, Vec<String>>;

/// Status of `slot` at this turn: active when the gold state gains or changes
/// the slot's value, dontcare when that new value is the dontcare sentinel.
pub fn slot_status(slot: &str, current: &SlotValues, previous: Option<&SlotValues>) -> SlotStatus {
    let new = current.get(slot);
    let old = previous.and_then(|p| p.get(slot));
    match new {
        Some(values) if Some(values) != old => {
            if values.iter().any(|v| v == DONTCARE) {
                SlotStatus::Dontcare
            } else {
                SlotStatus::Active
            }
        }
        _ => SlotStatus::None,
    }
}

struct Emitter<'a> {
    turn: &'a DialogueTurn,
    service: &'a str,
    tokenizer: &'a dyn Tokenizer,
    max_len: usize,
    stats: &'a mut BuildStats,
    out: Vec<QAExample>,
}

impl Emitter<'_> {
    fn pair(&mut self, seq1: &[&str], user_only: bool) -> Result<Option<SequencePair>> {
        let mut seq2 = Vec::with_capacity(2);
        if !user_only && !self.turn.system_utterance.is_empty() {
            seq2.push((UtteranceRole::System, self.turn.system_utterance.as_str()));
        }
        seq2.push((UtteranceRole::User, self.turn.user_utterance.as_str()));
        match build_sequence_pair(seq1, &seq2, self.tokenizer, self.max_len) {
            Ok(pair) => Ok(Some(pair)),
            Err(Error::Unbuildable { .. }) => {
                self.stats.dropped_unbuildable += 1;
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    fn push(
        &mut self,
        task: TaskKind,
        pair: SequencePair,
        label: LabelPayload,
        element: &str,
        value: Option<&str>,
    ) {
        self.stats.built += 1;
        self.out.push(QAExample {
            task,
            token_ids: pair.token_ids,
            segment_ids: pair.segment_ids,
            label,
            loss_mask: task.loss_mask(),
            keys: ExampleKeys {
                service: self.service.to_string(),
                element: element.to_string(),
                value: value.map(str::to_string),
                dialogue_id: self.turn.dialogue_id.clone(),
                turn_index: self.turn.turn_index,
            },
            offsets: pair.offsets,
        });
    }
}

/// Picks the gold span for a non-categorical slot: one whose text matches the
/// slot's new value if there is one, user side first.
fn pick_span<'a>(
    turn: &DialogueTurn,
    frame: &'a FrameAnnotation,
    slot: &str,
    new_values: Option<&Vec<String>>,
) -> Option<&'a crate::data::SpanLabel> {
    let mut spans: Vec<_> = frame.turn_spans.iter().filter(|s| s.slot == slot).collect();
    spans.sort_by_key(|s| s.utterance_role != UtteranceRole::User);
    let matches_value = |s: &&crate::data::SpanLabel| {
        let text =
            char_slice(turn.utterance(s.utterance_role), s.start_char, s.end_char).to_lowercase();
        new_values.is_some_and(|vals| vals.iter().any(|v| v.to_lowercase() == text))
    };
    spans
        .iter()
        .find(|s| matches_value(s))
        .or(spans.first())
        .copied()
}

/// Builds every QA example of one turn for one service.
///
/// `frame` supplies labels (absent at inference time, when all labels are
/// negative) and `previous` the gold state of the service before this turn.
/// Order: intents, requested slots, slot statuses, categorical values, spans.
pub fn build_examples(
    turn: &DialogueTurn,
    schema: &ServiceSchema,
    frame: Option<&FrameAnnotation>,
    previous: Option<&SlotValues>,
    tokenizer: &dyn Tokenizer,
    max_seq_len: usize,
    stats: &mut BuildStats,
) -> Result<Vec<QAExample>> {
    if let Some(f) = frame {
        if f.service != schema.service_name {
            return Err(Error::Consistency(format!(
                "frame for {} built against schema {}",
                f.service, schema.service_name
            )));
        }
    }
    let empty = SlotValues::new();
    let current = frame.map_or(&empty, |f| &f.state_slot_values);
    let status = |slot: &str| {
        if frame.is_some() {
            slot_status(slot, current, previous)
        } else {
            SlotStatus::None
        }
    };

    let mut em = Emitter {
        turn,
        service: &schema.service_name,
        tokenizer,
        max_len: max_seq_len,
        stats,
        out: Vec::new(),
    };

    for intent in &schema.intents {
        let label = frame.is_some_and(|f| f.active_intent == intent.name) as u8;
        if let Some(pair) = em.pair(&[intent.input_name(), &intent.description], false)? {
            em.push(
                TaskKind::Intent,
                pair,
                LabelPayload::Binary(label),
                &intent.name,
                None,
            );
        }
    }
    for slot in &schema.slots {
        let label = frame.is_some_and(|f| f.requested_slots.contains(&slot.name)) as u8;
        if let Some(pair) = em.pair(&[slot.input_name(), &slot.description], true)? {
            em.push(
                TaskKind::Requested,
                pair,
                LabelPayload::Binary(label),
                &slot.name,
                None,
            );
        }
    }
    for slot in &schema.slots {
        if let Some(pair) = em.pair(&[slot.input_name(), &slot.description], false)? {
            em.push(
                TaskKind::Status,
                pair,
                LabelPayload::Status(status(&slot.name)),
                &slot.name,
                None,
            );
        }
    }
    for slot in schema.categorical_slots() {
        let active = status(&slot.name) == SlotStatus::Active;
        for value in &slot.possible_values {
            let label = (active
                && current
                    .get(&slot.name)
                    .is_some_and(|vals| vals.contains(value))) as u8;
            if let Some(pair) = em.pair(&[slot.input_name(), value], false)? {
                em.push(
                    TaskKind::CatValue,
                    pair,
                    LabelPayload::Binary(label),
                    &slot.name,
                    Some(value),
                );
            }
        }
    }
    for slot in schema.free_form_slots() {
        let Some(pair) = em.pair(&[slot.input_name(), &slot.description], false)? else {
            continue;
        };
        let span = frame.and_then(|f| pick_span(turn, f, &slot.name, current.get(&slot.name)));
        let label = match span {
            Some(s) => {
                let (a, b) = align_span(s.utterance_role, s.start_char, s.end_char, &pair.offsets);
                if (a, b) == (0, 0) {
                    em.stats.truncated_spans += 1;
                }
                LabelPayload::Span(a, b)
            }
            None => LabelPayload::NO_SPAN,
        };
        em.push(TaskKind::Span, pair, label, &slot.name, None);
    }
    Ok(em.out)
}

/// Builds the examples of every turn and frame of a dialogue, threading the
/// previous gold state per service. Schemas are normalized here when enabled.
pub fn build_dialogue_examples(
    dialogue: &Dialogue,
    schemas: &SchemaSet,
    tokenizer: &dyn Tokenizer,
    config: &ExampleConfig,
    stats: &mut BuildStats,
) -> Result<Vec<QAExample>> {
    let mut out = Vec::new();
    for (pos, turn) in dialogue.turns.iter().enumerate() {
        for frame in &turn.frames {
            let schema =
                normalize_schema_names(schemas.require(&frame.service)?, config.normalize_names);
            let previous = dialogue.previous_state(pos, &frame.service);
            out.extend(build_examples(
                turn,
                &schema,
                Some(frame),
                previous,
                tokenizer,
                config.max_seq_len,
                stats,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{IntentDef, SlotDef, SpanLabel, NONE_INTENT};
    use crate::tokenizer::{VocabBuilder, WordPiece};
    use std::collections::BTreeSet;

    fn schema() -> ServiceSchema {
        ServiceSchema {
            service_name: "Restaurants_1".into(),
            description: "restaurant search".into(),
            intents: vec![
                IntentDef::new("FindRestaurant", "find a restaurant"),
                IntentDef::new("ReserveRestaurant", "reserve a table"),
            ],
            slots: vec![
                SlotDef::free_form("city", "city of the restaurant"),
                SlotDef::categorical(
                    "price",
                    "price range",
                    ["cheap", "moderate", "pricey", "ultra"],
                ),
                SlotDef::free_form("time", "time of the reservation"),
            ],
        }
    }

    fn tokenizer(texts: &[&str]) -> WordPiece {
        let mut b = VocabBuilder::new(1, true);
        for t in texts {
            b.add_text(t);
        }
        for s in [schema()] {
            for i in &s.intents {
                b.add_text(&i.name);
                b.add_text(&i.description);
            }
            for sl in &s.slots {
                b.add_text(&sl.name);
                b.add_text(&sl.description);
                sl.possible_values.iter().for_each(|v| b.add_text(v));
            }
        }
        b.add_text(":");
        WordPiece::new(b.build(), true)
    }

    fn turn(user: &str, frame: FrameAnnotation) -> DialogueTurn {
        DialogueTurn {
            dialogue_id: "d1".into(),
            turn_index: 0,
            system_utterance: String::new(),
            user_utterance: user.into(),
            frames: vec![frame],
        }
    }

    fn empty_frame() -> FrameAnnotation {
        FrameAnnotation {
            service: "Restaurants_1".into(),
            active_intent: NONE_INTENT.into(),
            requested_slots: BTreeSet::new(),
            state_slot_values: BTreeMap::new(),
            turn_spans: vec![],
        }
    }

    #[test]
    fn enumeration_count_matches_schema() {
        // 2 intents + 3 requested + 3 status + 4 values + 2 spans
        let t = turn("hello there", empty_frame());
        let tok = tokenizer(&["hello there"]);
        let mut stats = BuildStats::default();
        let ex = build_examples(
            &t,
            &schema(),
            Some(&t.frames[0]),
            None,
            &tok,
            128,
            &mut stats,
        )
        .unwrap();
        assert_eq!(ex.len(), 14);
        let count = |k: TaskKind| ex.iter().filter(|e| e.task == k).count();
        assert_eq!(
            [
                TaskKind::Intent,
                TaskKind::Requested,
                TaskKind::Status,
                TaskKind::CatValue,
                TaskKind::Span
            ]
            .map(count),
            [2, 3, 3, 4, 2]
        );
        // nothing relevant said: everything negative
        assert!(ex.iter().all(|e| e.label.is_negative()));
    }

    #[test]
    fn labels_follow_gold_frame() {
        let user = "find a cheap place in san jose";
        let frame = FrameAnnotation {
            service: "Restaurants_1".into(),
            active_intent: "FindRestaurant".into(),
            requested_slots: BTreeSet::from(["time".to_string()]),
            state_slot_values: BTreeMap::from([
                ("city".to_string(), vec!["san jose".to_string()]),
                ("price".to_string(), vec!["cheap".to_string()]),
            ]),
            turn_spans: vec![SpanLabel {
                slot: "city".into(),
                utterance_role: UtteranceRole::User,
                start_char: 22,
                end_char: 30,
            }],
        };
        let t = turn(user, frame);
        let tok = tokenizer(&[user]);
        let mut stats = BuildStats::default();
        let ex = build_examples(
            &t,
            &schema(),
            Some(&t.frames[0]),
            None,
            &tok,
            128,
            &mut stats,
        )
        .unwrap();
        let find = |task: TaskKind, el: &str, v: Option<&str>| {
            ex.iter()
                .find(|e| e.task == task && e.keys.element == el && e.keys.value.as_deref() == v)
                .unwrap()
        };
        assert_eq!(
            find(TaskKind::Intent, "FindRestaurant", None).label,
            LabelPayload::Binary(1)
        );
        assert_eq!(
            find(TaskKind::Intent, "ReserveRestaurant", None).label,
            LabelPayload::Binary(0)
        );
        assert_eq!(
            find(TaskKind::Requested, "time", None).label,
            LabelPayload::Binary(1)
        );
        assert_eq!(
            find(TaskKind::Status, "city", None).label,
            LabelPayload::Status(SlotStatus::Active)
        );
        assert_eq!(
            find(TaskKind::Status, "time", None).label,
            LabelPayload::Status(SlotStatus::None)
        );
        assert_eq!(
            find(TaskKind::CatValue, "price", Some("cheap")).label,
            LabelPayload::Binary(1)
        );
        assert_eq!(
            find(TaskKind::CatValue, "price", Some("ultra")).label,
            LabelPayload::Binary(0)
        );

        let span_ex = find(TaskKind::Span, "city", None);
        let LabelPayload::Span(s, e) = span_ex.label else {
            panic!()
        };
        let decoded: Vec<&str> = span_ex.token_ids[s..=e]
            .iter()
            .map(|&i| tok.id_to_token(i).unwrap())
            .collect();
        assert_eq!(decoded.join(" "), "san jose");
        assert_eq!(
            find(TaskKind::Span, "time", None).label,
            LabelPayload::NO_SPAN
        );

        // requested uses the user utterance only
        let t2 = DialogueTurn {
            system_utterance: "what time".into(),
            ..t.clone()
        };
        let ex2 = build_examples(
            &t2,
            &schema(),
            Some(&t2.frames[0]),
            None,
            &tok,
            128,
            &mut stats,
        )
        .unwrap();
        let req = ex2.iter().find(|e| e.task == TaskKind::Requested).unwrap();
        let st = ex2.iter().find(|e| e.task == TaskKind::Status).unwrap();
        assert_eq!(st.token_ids.len(), req.token_ids.len() + 2);
    }

    #[test]
    fn status_is_delta_of_gold_state() {
        let prev = SlotValues::from([("city".to_string(), vec!["paris".to_string()])]);
        let same = prev.clone();
        assert_eq!(slot_status("city", &same, Some(&prev)), SlotStatus::None);
        let changed = SlotValues::from([("city".to_string(), vec!["rome".to_string()])]);
        assert_eq!(
            slot_status("city", &changed, Some(&prev)),
            SlotStatus::Active
        );
        let dc = SlotValues::from([("city".to_string(), vec![DONTCARE.to_string()])]);
        assert_eq!(slot_status("city", &dc, Some(&prev)), SlotStatus::Dontcare);
        assert_eq!(
            slot_status("city", &SlotValues::new(), Some(&prev)),
            SlotStatus::None
        );
    }

    #[test]
    fn truncated_span_degrades_to_sentinel() {
        let user = "a b c d e f g h i j k l m n o p the time is noon";
        let mut frame = empty_frame();
        frame
            .state_slot_values
            .insert("time".into(), vec!["noon".into()]);
        frame.turn_spans.push(SpanLabel {
            slot: "time".into(),
            utterance_role: UtteranceRole::User,
            start_char: 44,
            end_char: 48,
        });
        let t = turn(user, frame);
        let tok = tokenizer(&[user]);
        let mut stats = BuildStats::default();
        let ex = build_examples(
            &t,
            &schema(),
            Some(&t.frames[0]),
            None,
            &tok,
            16,
            &mut stats,
        )
        .unwrap();
        let span = ex
            .iter()
            .find(|e| e.task == TaskKind::Span && e.keys.element == "time")
            .unwrap();
        assert_eq!(span.label, LabelPayload::NO_SPAN);
        assert_eq!(stats.truncated_spans, 1);
        assert!(ex.iter().all(|e| e.valid_length() <= 16));
    }

    #[test]
    fn unbuildable_examples_are_dropped_and_counted() {
        let t = turn("hi", empty_frame());
        let tok = tokenizer(&["hi"]);
        let mut stats = BuildStats::default();
        // "reserve restaurant : reserve a table" etc. do not fit in 5 tokens
        let ex =
            build_examples(&t, &schema(), Some(&t.frames[0]), None, &tok, 5, &mut stats).unwrap();
        assert!(stats.dropped_unbuildable > 0);
        assert_eq!(ex.len() + stats.dropped_unbuildable, 14);
    }
}
