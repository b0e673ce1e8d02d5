//! Reading and writing the published SGD JSON layouts, plus the internal
//! one-turn-per-line JSONL form.
//!
//! Schema files are a JSON array of services. Dialogue files are JSON arrays
//! of dialogues whose turns alternate `USER` / `SYSTEM`; user frames carry the
//! cumulative `state`, both sides carry `slots` spans (`start`,
//! `exclusive_end`). Fields the toolkit does not use (actions, service calls,
//! intent slot lists) are ignored on read.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{
    validate_dialogue, Dialogue, DialogueTurn, FrameAnnotation, IntentDef, SchemaSet,
    ServiceSchema, SlotDef, SpanLabel, UtteranceRole,
};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct RawIntent {
    name: String,
    description: String,
}

#[derive(Serialize, Deserialize)]
struct RawSlot {
    name: String,
    description: String,
    is_categorical: bool,
    #[serde(default)]
    possible_values: Vec<Value>,
}

#[derive(Serialize, Deserialize)]
struct RawService {
    service_name: String,
    description: String,
    #[serde(default)]
    slots: Vec<RawSlot>,
    #[serde(default)]
    intents: Vec<RawIntent>,
}

#[derive(Serialize, Deserialize)]
struct RawSpan {
    slot: String,
    start: usize,
    exclusive_end: usize,
}

#[derive(Serialize, Deserialize)]
struct RawState {
    active_intent: String,
    #[serde(default)]
    requested_slots: Vec<String>,
    #[serde(default)]
    slot_values: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct RawFrame {
    service: String,
    #[serde(default)]
    slots: Vec<RawSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<RawState>,
    #[serde(default)]
    actions: Vec<Value>,
}

#[derive(Serialize, Deserialize)]
struct RawTurn {
    speaker: String,
    utterance: String,
    #[serde(default)]
    frames: Vec<RawFrame>,
}

#[derive(Serialize, Deserialize)]
struct RawDialogue {
    dialogue_id: String,
    #[serde(default)]
    services: Vec<String>,
    turns: Vec<RawTurn>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, &e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Validation(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn value_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Resolves a schema path: either the file itself or a directory holding `schema.json`.
pub fn schema_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("schema.json")
    } else {
        path.to_path_buf()
    }
}

pub fn load_schemas(path: &Path) -> Result<Vec<ServiceSchema>> {
    let path = schema_file(path);
    let raw: Vec<RawService> = read_json(&path)?;
    let mut out = Vec::with_capacity(raw.len());
    for svc in raw {
        let mut slots = Vec::with_capacity(svc.slots.len());
        for slot in svc.slots {
            let mut values = Vec::with_capacity(slot.possible_values.len());
            for v in &slot.possible_values {
                values.push(value_to_string(v).ok_or_else(|| {
                    Error::Validation(format!(
                        "service {}, slot {}: unsupported possible value {v}",
                        svc.service_name, slot.name
                    ))
                })?);
            }
            slots.push(SlotDef {
                name: slot.name,
                description: slot.description,
                is_categorical: slot.is_categorical,
                possible_values: values,
                display_name: None,
            });
        }
        let schema = ServiceSchema {
            service_name: svc.service_name,
            description: svc.description,
            intents: svc
                .intents
                .into_iter()
                .map(|i| IntentDef::new(i.name, i.description))
                .collect(),
            slots,
        };
        schema.validate()?;
        out.push(schema);
    }
    SchemaSet::new(out.iter().cloned())?;
    Ok(out)
}

pub fn write_schemas(path: &Path, schemas: &[ServiceSchema]) -> Result<()> {
    let raw: Vec<RawService> = schemas
        .iter()
        .map(|s| RawService {
            service_name: s.service_name.clone(),
            description: s.description.clone(),
            slots: s
                .slots
                .iter()
                .map(|slot| RawSlot {
                    name: slot.name.clone(),
                    description: slot.description.clone(),
                    is_categorical: slot.is_categorical,
                    possible_values: slot
                        .possible_values
                        .iter()
                        .map(|v| Value::String(v.clone()))
                        .collect(),
                })
                .collect(),
            intents: s
                .intents
                .iter()
                .map(|i| RawIntent {
                    name: i.name.clone(),
                    description: i.description.clone(),
                })
                .collect(),
        })
        .collect();
    write_json(&schema_file(path), &raw)
}

/// Dialogue files under `path`: the file itself, or every `dialogues_*.json` in the directory.
pub fn dialogue_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("dialogues_") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Validation(format!(
            "no dialogues_*.json files in {}",
            path.display()
        )));
    }
    Ok(files)
}

fn convert_dialogue(raw: RawDialogue) -> Result<Dialogue> {
    let id = raw.dialogue_id;
    let mut turns = Vec::new();
    let mut pending_system: Option<RawTurn> = None;
    for turn in raw.turns {
        match turn.speaker.as_str() {
            "SYSTEM" => pending_system = Some(turn),
            "USER" => {
                let system = pending_system.take();
                let system_utterance = system
                    .as_ref()
                    .map(|t| t.utterance.clone())
                    .unwrap_or_default();
                let mut frames = Vec::new();
                for frame in turn.frames {
                    let Some(state) = frame.state else { continue };
                    let mut spans = Vec::new();
                    if let Some(sys) = &system {
                        for sf in sys.frames.iter().filter(|f| f.service == frame.service) {
                            spans.extend(sf.slots.iter().map(|s| SpanLabel {
                                slot: s.slot.clone(),
                                utterance_role: UtteranceRole::System,
                                start_char: s.start,
                                end_char: s.exclusive_end,
                            }));
                        }
                    }
                    spans.extend(frame.slots.iter().map(|s| SpanLabel {
                        slot: s.slot.clone(),
                        utterance_role: UtteranceRole::User,
                        start_char: s.start,
                        end_char: s.exclusive_end,
                    }));
                    frames.push(FrameAnnotation {
                        service: frame.service,
                        active_intent: state.active_intent,
                        requested_slots: state.requested_slots.into_iter().collect::<BTreeSet<_>>(),
                        state_slot_values: state.slot_values,
                        turn_spans: spans,
                    });
                }
                turns.push(DialogueTurn {
                    dialogue_id: id.clone(),
                    turn_index: turns.len(),
                    system_utterance,
                    user_utterance: turn.utterance,
                    frames,
                });
            }
            other => {
                return Err(Error::Validation(format!(
                    "dialogue {id}: unknown speaker {other}"
                )))
            }
        }
    }
    Ok(Dialogue {
        dialogue_id: id,
        services: raw.services,
        turns,
    })
}

/// Loads and validates every dialogue under `path` against `schemas`.
pub fn load_dialogues(path: &Path, schemas: &SchemaSet) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for file in dialogue_files(path)? {
        let raw: Vec<RawDialogue> = read_json(&file)?;
        for d in raw {
            let dialogue = convert_dialogue(d)?;
            validate_dialogue(&dialogue, schemas)?;
            out.push(dialogue);
        }
    }
    Ok(out)
}

fn to_raw(dialogue: &Dialogue) -> RawDialogue {
    let span = |s: &SpanLabel| RawSpan {
        slot: s.slot.clone(),
        start: s.start_char,
        exclusive_end: s.end_char,
    };
    let mut turns = Vec::new();
    for (pos, turn) in dialogue.turns.iter().enumerate() {
        if pos > 0 || !turn.system_utterance.is_empty() {
            turns.push(RawTurn {
                speaker: "SYSTEM".into(),
                utterance: turn.system_utterance.clone(),
                frames: turn
                    .frames
                    .iter()
                    .map(|f| RawFrame {
                        service: f.service.clone(),
                        slots: f
                            .turn_spans
                            .iter()
                            .filter(|s| s.utterance_role == UtteranceRole::System)
                            .map(span)
                            .collect(),
                        state: None,
                        actions: Vec::new(),
                    })
                    .collect(),
            });
        }
        turns.push(RawTurn {
            speaker: "USER".into(),
            utterance: turn.user_utterance.clone(),
            frames: turn
                .frames
                .iter()
                .map(|f| RawFrame {
                    service: f.service.clone(),
                    slots: f
                        .turn_spans
                        .iter()
                        .filter(|s| s.utterance_role == UtteranceRole::User)
                        .map(span)
                        .collect(),
                    state: Some(RawState {
                        active_intent: f.active_intent.clone(),
                        requested_slots: f.requested_slots.iter().cloned().collect(),
                        slot_values: f.state_slot_values.clone(),
                    }),
                    actions: Vec::new(),
                })
                .collect(),
        });
    }
    RawDialogue {
        dialogue_id: dialogue.dialogue_id.clone(),
        services: dialogue.services.clone(),
        turns,
    }
}

/// Writes dialogues in the SGD layout to a single file.
pub fn write_dialogues(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    let raw: Vec<RawDialogue> = dialogues.iter().map(to_raw).collect();
    write_json(path, &raw)
}

/// Internal normalized form: one [`DialogueTurn`] per line.
pub fn write_turns_jsonl(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for turn in dialogues.iter().flat_map(|d| &d.turns) {
        let line = serde_json::to_string(turn).map_err(|e| Error::Validation(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_turns_jsonl(path: &Path) -> Result<Vec<Dialogue>> {
    let turns: Vec<DialogueTurn> = read_jsonl(path)?;
    let mut dialogues: Vec<Dialogue> = Vec::new();
    for turn in turns {
        match dialogues.last_mut() {
            Some(d) if d.dialogue_id == turn.dialogue_id => d.turns.push(turn),
            _ => dialogues.push(Dialogue {
                dialogue_id: turn.dialogue_id.clone(),
                services: Vec::new(),
                turns: vec![turn],
            }),
        }
    }
    for d in &mut dialogues {
        let services: BTreeSet<String> = d
            .turns
            .iter()
            .flat_map(|t| t.frames.iter().map(|f| f.service.clone()))
            .collect();
        d.services = services.into_iter().collect();
    }
    Ok(dialogues)
}

/// Reads a JSON-lines file, reporting the failing line on parse errors.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::Validation(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = r#"[{
        "service_name": "Restaurants_1",
        "description": "A leading provider for restaurant search and reservations",
        "slots": [
            {"name": "city", "description": "City in which the restaurant is located", "is_categorical": false, "possible_values": []},
            {"name": "restaurant_name", "description": "Name of the restaurant", "is_categorical": false, "possible_values": []},
            {"name": "party_size", "description": "Number of seats to reserve", "is_categorical": true, "possible_values": [1, 2, "3"]}
        ],
        "intents": [
            {"name": "ReserveRestaurant", "description": "Reserve a table at a restaurant", "is_transactional": true, "required_slots": [], "optional_slots": {}, "result_slots": []},
            {"name": "FindRestaurants", "description": "Find a restaurant of a particular cuisine in a city", "is_transactional": false}
        ]
    }]"#;

    #[test]
    fn loads_schema_fields_and_numeric_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        fs::write(&path, SCHEMA).unwrap();
        let schemas = load_schemas(dir.path()).unwrap();
        assert_eq!(schemas.len(), 1);
        assert_eq!(schemas[0].intents.len(), 2);
        assert_eq!(schemas[0].slots.len(), 3);
        assert_eq!(schemas[0].slots[2].possible_values, vec!["1", "2", "3"]);
    }

    #[test]
    fn malformed_json_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        fs::write(&path, "[{\"service_name\": \"x\",\n oops}]").unwrap();
        match load_schemas(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn user_first_turn_has_empty_system_side() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("schema.json"), SCHEMA).unwrap();
        let dialogues = r#"[{
            "dialogue_id": "1_00000",
            "services": ["Restaurants_1"],
            "turns": [
                {"speaker": "USER", "utterance": "find me food in Paris",
                 "frames": [{"service": "Restaurants_1", "slots": [{"slot": "city", "start": 16, "exclusive_end": 21}],
                   "state": {"active_intent": "FindRestaurants", "requested_slots": [], "slot_values": {"city": ["Paris"]}},
                   "actions": []}]},
                {"speaker": "SYSTEM", "utterance": "How about Chez Nous?",
                 "frames": [{"service": "Restaurants_1", "slots": [{"slot": "restaurant_name", "start": 10, "exclusive_end": 19}], "actions": []}]},
                {"speaker": "USER", "utterance": "Sounds good",
                 "frames": [{"service": "Restaurants_1", "slots": [],
                   "state": {"active_intent": "FindRestaurants", "requested_slots": [], "slot_values": {"city": ["Paris"], "restaurant_name": ["Chez Nous"]}},
                   "actions": []}]}
            ]
        }]"#;
        fs::write(dir.path().join("dialogues_001.json"), dialogues).unwrap();
        let schemas = SchemaSet::new(load_schemas(dir.path()).unwrap()).unwrap();
        let loaded = load_dialogues(dir.path(), &schemas).unwrap();
        assert_eq!(loaded.len(), 1);
        let turns = &loaded[0].turns;
        assert_eq!(turns.len(), 2);
        assert_eq!(turns[0].system_utterance, "");
        assert_eq!(turns[1].system_utterance, "How about Chez Nous?");
        let span = &turns[1].frames[0].turn_spans[0];
        assert_eq!(span.utterance_role, UtteranceRole::System);

        // write back and reload
        let out = tempfile::tempdir().unwrap();
        write_schemas(out.path(), &schemas.to_vec()).unwrap();
        write_dialogues(&out.path().join("dialogues_001.json"), &loaded).unwrap();
        let schemas2 = SchemaSet::new(load_schemas(out.path()).unwrap()).unwrap();
        assert_eq!(schemas2, schemas);
        assert_eq!(load_dialogues(out.path(), &schemas2).unwrap(), loaded);

        let jsonl = out.path().join("turns.jsonl");
        write_turns_jsonl(&jsonl, &loaded).unwrap();
        assert_eq!(read_turns_jsonl(&jsonl).unwrap(), loaded);
    }

    #[test]
    fn span_past_end_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("schema.json"), SCHEMA).unwrap();
        let dialogues = r#"[{"dialogue_id": "9_1", "services": ["Restaurants_1"], "turns": [
            {"speaker": "USER", "utterance": "Paris",
             "frames": [{"service": "Restaurants_1", "slots": [{"slot": "city", "start": 0, "exclusive_end": 9}],
               "state": {"active_intent": "NONE", "requested_slots": [], "slot_values": {}}}]}]}]"#;
        fs::write(dir.path().join("dialogues_001.json"), dialogues).unwrap();
        let schemas = SchemaSet::new(load_schemas(dir.path()).unwrap()).unwrap();
        let err = load_dialogues(dir.path(), &schemas).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("9_1")),
            "{err}"
        );
    }

    #[test]
    fn unknown_service_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("schema.json"), SCHEMA).unwrap();
        let dialogues = r#"[{"dialogue_id": "9_2", "services": ["Hotels_1"], "turns": [
            {"speaker": "USER", "utterance": "a room",
             "frames": [{"service": "Hotels_1", "slots": [],
               "state": {"active_intent": "NONE", "requested_slots": [], "slot_values": {}}}]}]}]"#;
        fs::write(dir.path().join("dialogues_001.json"), dialogues).unwrap();
        let schemas = SchemaSet::new(load_schemas(dir.path()).unwrap()).unwrap();
        assert!(load_dialogues(dir.path(), &schemas).is_err());
    }
}
