//! Fixtures and reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use schema_dst::data::{
    Dialogue, DialogueTurn, FrameAnnotation, IntentDef, SchemaSet, ServiceSchema, SlotDef,
    SpanLabel, UtteranceRole, DONTCARE, NONE_INTENT,
};
use schema_dst::qa::{build_examples, BuildStats, QAExample, FIELD_SEPARATOR};
use schema_dst::tokenizer::{Tokenizer, VocabBuilder, WordPiece};
use schema_dst::tracker::DialogueState;

pub const FIXTURE_SERVICE: &str = "Restaurants_1";

pub fn fixture_schema() -> ServiceSchema {
    ServiceSchema {
        service_name: FIXTURE_SERVICE.into(),
        description: "find and reserve restaurants".into(),
        intents: vec![
            IntentDef::new("FindRestaurants", "find a restaurant in a city"),
            IntentDef::new("ReserveRestaurant", "book a table at a restaurant"),
        ],
        slots: vec![
            SlotDef::free_form("city", "city where the restaurant is located"),
            SlotDef::categorical(
                "price_range",
                "price range of the restaurant",
                ["cheap", "moderate", "expensive"],
            ),
            SlotDef::free_form("street_address", "address of the restaurant"),
        ],
    }
}

fn span(text: &str, value: &str, slot: &str, role: UtteranceRole) -> SpanLabel {
    let byte = text.find(value).expect("value occurs in utterance");
    let start_char = text[..byte].chars().count();
    SpanLabel {
        slot: slot.into(),
        utterance_role: role,
        start_char,
        end_char: start_char + value.chars().count(),
    }
}

/// One two-turn dialogue over the fixture schema. The second turn carries a
/// system-side span, a categorical value and a requested slot.
pub fn fixture_dialogue() -> Dialogue {
    let u0 = "i am looking for a place to eat in san jose";
    let s1 = "there is a cheap place in san jose called sakoon .";
    let u1 = "cheap works , what is the street address ?";
    let state0 = BTreeMap::from([("city".to_string(), vec!["san jose".to_string()])]);
    let mut state1 = state0.clone();
    state1.insert("price_range".into(), vec!["cheap".into()]);
    Dialogue {
        dialogue_id: "fixture_001".into(),
        services: vec![FIXTURE_SERVICE.into()],
        turns: vec![
            DialogueTurn {
                dialogue_id: "fixture_001".into(),
                turn_index: 0,
                system_utterance: String::new(),
                user_utterance: u0.into(),
                frames: vec![FrameAnnotation {
                    service: FIXTURE_SERVICE.into(),
                    active_intent: "FindRestaurants".into(),
                    requested_slots: BTreeSet::new(),
                    state_slot_values: state0,
                    turn_spans: vec![span(u0, "san jose", "city", UtteranceRole::User)],
                }],
            },
            DialogueTurn {
                dialogue_id: "fixture_001".into(),
                turn_index: 1,
                system_utterance: s1.into(),
                user_utterance: u1.into(),
                frames: vec![FrameAnnotation {
                    service: FIXTURE_SERVICE.into(),
                    active_intent: "FindRestaurants".into(),
                    requested_slots: BTreeSet::from(["street_address".to_string()]),
                    state_slot_values: state1,
                    turn_spans: vec![span(s1, "san jose", "city", UtteranceRole::System)],
                }],
            },
        ],
    }
}

/// Vocabulary over every text of the fixture, so no token maps to `[UNK]`.
pub fn fixture_tokenizer() -> WordPiece {
    let schema = fixture_schema();
    let dialogue = fixture_dialogue();
    let mut b = VocabBuilder::new(1, true);
    b.add_text(FIELD_SEPARATOR);
    b.add_text(&schema.description);
    for i in &schema.intents {
        b.add_text(&i.name);
        b.add_text(&i.description);
    }
    for s in &schema.slots {
        b.add_text(&s.name);
        b.add_text(&s.description);
        for v in &s.possible_values {
            b.add_text(v);
        }
    }
    for t in &dialogue.turns {
        b.add_text(&t.system_utterance);
        b.add_text(&t.user_utterance);
    }
    WordPiece::new(b.build(), true)
}

/// Every labelled example of the fixture dialogue's second turn.
pub fn fixture_examples(tokenizer: &dyn Tokenizer, max_seq_len: usize) -> Vec<QAExample> {
    let schema = fixture_schema();
    let dialogue = fixture_dialogue();
    let turn = &dialogue.turns[1];
    let mut stats = BuildStats::default();
    build_examples(
        turn,
        &schema,
        turn.frame(FIXTURE_SERVICE),
        dialogue.previous_state(1, FIXTURE_SERVICE),
        tokenizer,
        max_seq_len,
        &mut stats,
    )
    .unwrap()
}

/// Compares a tracked state with the gold frames of one turn. Returns a
/// description of the first difference.
pub fn state_matches_gold(
    turn: &DialogueTurn,
    state: &DialogueState,
    schemas: &SchemaSet,
) -> Result<(), String> {
    for frame in &turn.frames {
        let got = state
            .get(&frame.service)
            .ok_or_else(|| format!("turn {}: no state for {}", turn.turn_index, frame.service))?;
        let gold_intent = if frame.active_intent.is_empty() {
            NONE_INTENT
        } else {
            frame.active_intent.as_str()
        };
        if got.active_intent != gold_intent {
            return Err(format!(
                "turn {} {}: intent {} vs gold {}",
                turn.turn_index, frame.service, got.active_intent, gold_intent
            ));
        }
        if got.requested_slots != frame.requested_slots {
            return Err(format!(
                "turn {} {}: requested {:?} vs gold {:?}",
                turn.turn_index, frame.service, got.requested_slots, frame.requested_slots
            ));
        }
        let gold_keys: BTreeSet<&String> = frame.state_slot_values.keys().collect();
        let got_keys: BTreeSet<&String> = got.slot_values.keys().collect();
        if gold_keys != got_keys {
            return Err(format!(
                "turn {} {}: slots {:?} vs gold {:?}",
                turn.turn_index, frame.service, got_keys, gold_keys
            ));
        }
        let schema = schemas.require(&frame.service).map_err(|e| e.to_string())?;
        for (slot, values) in &frame.state_slot_values {
            let v = &got.slot_values[slot];
            let categorical = schema.slot(slot).is_some_and(|s| s.is_categorical);
            let ok = values.iter().any(|g| {
                if categorical || g == DONTCARE {
                    g == v
                } else {
                    g.to_lowercase() == v.to_lowercase()
                }
            });
            if !ok {
                return Err(format!(
                    "turn {} {}: {slot} = {v:?} vs gold {values:?}",
                    turn.turn_index, frame.service
                ));
            }
        }
    }
    Ok(())
}
