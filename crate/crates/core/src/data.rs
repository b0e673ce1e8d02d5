//! Schemas, dialogues and their gold annotations.
//!
//! A [`DialogueTurn`] pairs the system utterance that precedes a user
//! utterance with that user utterance, so the first turn of a dialogue has an
//! empty system side. Character offsets are counted in Unicode scalar values,
//! matching the offsets in published SGD files.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel for "no active intent".
pub const NONE_INTENT: &str = "NONE";
/// Value assigned to a slot the user explicitly does not care about.
pub const DONTCARE: &str = "dontcare";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentDef {
    pub name: String,
    pub description: String,
    /// Text used in model inputs when it differs from `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
}

impl IntentDef {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            display_name: None,
        }
    }

    pub fn input_name(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    pub description: String,
    pub is_categorical: bool,
    #[serde(default)]
    pub possible_values: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
}

impl SlotDef {
    pub fn categorical(
        name: impl Into<String>,
        description: impl Into<String>,
        values: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            is_categorical: true,
            possible_values: values.into_iter().map(Into::into).collect(),
            display_name: None,
        }
    }

    pub fn free_form(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            is_categorical: false,
            possible_values: Vec::new(),
            display_name: None,
        }
    }

    pub fn input_name(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.name)
    }
}

/// Natural-language ontology of one service.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSchema {
    pub service_name: String,
    pub description: String,
    pub intents: Vec<IntentDef>,
    pub slots: Vec<SlotDef>,
}

impl ServiceSchema {
    pub fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn intent(&self, name: &str) -> Option<&IntentDef> {
        self.intents.iter().find(|i| i.name == name)
    }

    pub fn categorical_slots(&self) -> impl Iterator<Item = &SlotDef> {
        self.slots.iter().filter(|s| s.is_categorical)
    }

    pub fn free_form_slots(&self) -> impl Iterator<Item = &SlotDef> {
        self.slots.iter().filter(|s| !s.is_categorical)
    }

    pub fn validate(&self) -> Result<()> {
        let svc = &self.service_name;
        if svc.is_empty() {
            return Err(Error::Validation("service with empty name".into()));
        }
        if self.description.trim().is_empty() {
            return Err(Error::Validation(format!(
                "service {svc}: empty description"
            )));
        }
        let mut seen = BTreeSet::new();
        for intent in &self.intents {
            if !seen.insert(intent.name.as_str()) {
                return Err(Error::Validation(format!(
                    "service {svc}: duplicate intent {}",
                    intent.name
                )));
            }
            if intent.description.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "service {svc}, intent {}: empty description",
                    intent.name
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for slot in &self.slots {
            let name = &slot.name;
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!(
                    "service {svc}: duplicate slot {name}"
                )));
            }
            if slot.description.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "service {svc}, slot {name}: empty description"
                )));
            }
            if slot.is_categorical && slot.possible_values.is_empty() {
                return Err(Error::Validation(format!(
                    "service {svc}, slot {name}: categorical slot without possible values"
                )));
            }
            if !slot.is_categorical && !slot.possible_values.is_empty() {
                return Err(Error::Validation(format!(
                    "service {svc}, slot {name}: non-categorical slot lists possible values"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtteranceRole {
    System,
    User,
}

/// Character span of a non-categorical slot value, end exclusive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanLabel {
    pub slot: String,
    pub utterance_role: UtteranceRole,
    pub start_char: usize,
    pub end_char: usize,
}

/// Gold annotation of one service within one turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub service: String,
    pub active_intent: String,
    #[serde(default)]
    pub requested_slots: BTreeSet<String>,
    /// Cumulative gold state; each slot lists all acceptable surface forms.
    #[serde(default)]
    pub state_slot_values: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub turn_spans: Vec<SpanLabel>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub system_utterance: String,
    pub user_utterance: String,
    pub frames: Vec<FrameAnnotation>,
}

impl DialogueTurn {
    pub fn utterance(&self, role: UtteranceRole) -> &str {
        match role {
            UtteranceRole::System => &self.system_utterance,
            UtteranceRole::User => &self.user_utterance,
        }
    }

    pub fn frame(&self, service: &str) -> Option<&FrameAnnotation> {
        self.frames.iter().find(|f| f.service == service)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub services: Vec<String>,
    pub turns: Vec<DialogueTurn>,
}

impl Dialogue {
    /// Gold slot values of `service` before turn `turn_pos` (position in `turns`).
    pub fn previous_state(
        &self,
        turn_pos: usize,
        service: &str,
    ) -> Option<&BTreeMap<String, Vec<String>>> {
        self.turns[..turn_pos]
            .iter()
            .rev()
            .find_map(|t| t.frame(service))
            .map(|f| &f.state_slot_values)
    }
}

/// Schemas keyed by service name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SchemaSet {
    services: BTreeMap<String, ServiceSchema>,
}

impl SchemaSet {
    pub fn new(schemas: impl IntoIterator<Item = ServiceSchema>) -> Result<Self> {
        let mut services = BTreeMap::new();
        for schema in schemas {
            schema.validate()?;
            let name = schema.service_name.clone();
            if services.insert(name.clone(), schema).is_some() {
                return Err(Error::Validation(format!("duplicate service {name}")));
            }
        }
        Ok(Self { services })
    }

    pub fn get(&self, service: &str) -> Option<&ServiceSchema> {
        self.services.get(service)
    }

    pub fn require(&self, service: &str) -> Result<&ServiceSchema> {
        self.get(service)
            .ok_or_else(|| Error::Validation(format!("unknown service {service}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ServiceSchema> {
        self.services.values()
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.services.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn to_vec(&self) -> Vec<ServiceSchema> {
        self.services.values().cloned().collect()
    }

    pub fn map(&self, f: impl Fn(&ServiceSchema) -> ServiceSchema) -> Self {
        Self {
            services: self
                .services
                .iter()
                .map(|(k, v)| (k.clone(), f(v)))
                .collect(),
        }
    }
}

/// Seen/unseen bookkeeping for an evaluation split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRegistry {
    pub seen_services: BTreeSet<String>,
    pub all_services: BTreeSet<String>,
}

impl ServiceRegistry {
    pub fn is_seen(&self, service: &str) -> bool {
        self.seen_services.contains(service)
    }

    pub fn seen_fraction(&self) -> f64 {
        if self.all_services.is_empty() {
            return 0.0;
        }
        self.seen_services.len() as f64 / self.all_services.len() as f64
    }
}

/// Seen services are the evaluated services that also appear in training.
pub fn mark_seen_services(
    train_schemas: &[ServiceSchema],
    eval_schemas: &[ServiceSchema],
) -> ServiceRegistry {
    let train: BTreeSet<&str> = train_schemas
        .iter()
        .map(|s| s.service_name.as_str())
        .collect();
    let all_services: BTreeSet<String> = eval_schemas
        .iter()
        .map(|s| s.service_name.clone())
        .collect();
    let seen_services = all_services
        .iter()
        .filter(|s| train.contains(s.as_str()))
        .cloned()
        .collect();
    ServiceRegistry {
        seen_services,
        all_services,
    }
}

/// Checks ordering, service references and span bounds of one dialogue.
pub fn validate_dialogue(dialogue: &Dialogue, schemas: &SchemaSet) -> Result<()> {
    let id = &dialogue.dialogue_id;
    let mut last_index: Option<usize> = None;
    for turn in &dialogue.turns {
        let t = turn.turn_index;
        if let Some(prev) = last_index {
            if t <= prev {
                return Err(Error::Validation(format!(
                    "dialogue {id}: turn_index {t} not increasing after {prev}"
                )));
            }
        }
        last_index = Some(t);
        for frame in &turn.frames {
            let schema = schemas.get(&frame.service).ok_or_else(|| {
                Error::Validation(format!(
                    "dialogue {id}, turn {t}: unknown service {}",
                    frame.service
                ))
            })?;
            if frame.active_intent != NONE_INTENT && schema.intent(&frame.active_intent).is_none() {
                return Err(Error::Validation(format!(
                    "dialogue {id}, turn {t}: unknown intent {} for {}",
                    frame.active_intent, frame.service
                )));
            }
            for slot in &frame.requested_slots {
                if schema.slot(slot).is_none() {
                    return Err(Error::Validation(format!(
                        "dialogue {id}, turn {t}: requested slot {slot} not in {}",
                        frame.service
                    )));
                }
            }
            for slot in frame.state_slot_values.keys() {
                if schema.slot(slot).is_none() {
                    return Err(Error::Validation(format!(
                        "dialogue {id}, turn {t}: state slot {slot} not in {}",
                        frame.service
                    )));
                }
            }
            for span in &frame.turn_spans {
                let slot = schema.slot(&span.slot).ok_or_else(|| {
                    Error::Validation(format!(
                        "dialogue {id}, turn {t}: span slot {} not in {}",
                        span.slot, frame.service
                    ))
                })?;
                if slot.is_categorical {
                    return Err(Error::Validation(format!(
                        "dialogue {id}, turn {t}: span for categorical slot {}",
                        span.slot
                    )));
                }
                let len = turn.utterance(span.utterance_role).chars().count();
                if span.start_char >= span.end_char || span.end_char > len {
                    return Err(Error::Validation(format!(
                        "dialogue {id}, turn {t}: span {}..{} for slot {} outside utterance of length {len}",
                        span.start_char, span.end_char, span.slot
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Character-indexed substring; `start..end` counted in chars.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()));
    let from = indices.clone().nth(start).unwrap_or(text.len());
    let to = indices.nth(end).unwrap_or(text.len());
    &text[from..to.max(from)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> ServiceSchema {
        ServiceSchema {
            service_name: "Restaurants_1".into(),
            description: "find and book restaurants".into(),
            intents: vec![IntentDef::new("FindRestaurant", "find a restaurant")],
            slots: vec![
                SlotDef::free_form("city", "city of the restaurant"),
                SlotDef::categorical("price", "price range", ["cheap", "pricey"]),
            ],
        }
    }

    #[test]
    fn seen_is_intersection() {
        let mk = |n: &str| ServiceSchema {
            service_name: n.into(),
            ..schema()
        };
        let reg = mark_seen_services(&[mk("A"), mk("B")], &[mk("B"), mk("C")]);
        assert_eq!(reg.seen_services, BTreeSet::from(["B".to_string()]));
        assert_eq!(reg.all_services.len(), 2);

        let same = mark_seen_services(&[mk("A"), mk("B")], &[mk("A"), mk("B")]);
        assert_eq!(same.seen_fraction(), 1.0);

        let disjoint = mark_seen_services(&[mk("A")], &[mk("C")]);
        assert!(disjoint.seen_services.is_empty());
    }

    #[test]
    fn categorical_without_values_is_rejected() {
        let mut s = schema();
        s.slots[1].possible_values.clear();
        let err = s.validate().unwrap_err().to_string();
        assert!(
            err.contains("Restaurants_1") && err.contains("price"),
            "{err}"
        );
    }

    #[test]
    fn span_past_utterance_end_names_dialogue() {
        let schemas = SchemaSet::new([schema()]).unwrap();
        let dialogue = Dialogue {
            dialogue_id: "d7".into(),
            services: vec!["Restaurants_1".into()],
            turns: vec![DialogueTurn {
                dialogue_id: "d7".into(),
                turn_index: 0,
                system_utterance: String::new(),
                user_utterance: "in paris".into(),
                frames: vec![FrameAnnotation {
                    service: "Restaurants_1".into(),
                    active_intent: "FindRestaurant".into(),
                    requested_slots: BTreeSet::new(),
                    state_slot_values: BTreeMap::from([("city".into(), vec!["paris".into()])]),
                    turn_spans: vec![SpanLabel {
                        slot: "city".into(),
                        utterance_role: UtteranceRole::User,
                        start_char: 3,
                        end_char: 12,
                    }],
                }],
            }],
        };
        let err = validate_dialogue(&dialogue, &schemas)
            .unwrap_err()
            .to_string();
        assert!(err.contains("d7") && err.contains("turn 0"), "{err}");
    }

    #[test]
    fn char_slice_counts_chars() {
        assert_eq!(char_slice("café au lait", 3, 7), "é au");
        assert_eq!(char_slice("abc", 1, 3), "bc");
        assert_eq!(char_slice("abc", 3, 3), "");
    }
}
