//! Rule-based state tracker: folds per-turn predictions into the cumulative
//! dialogue state.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{Dialogue, SchemaSet, ServiceSchema, DONTCARE, NONE_INTENT};
use crate::error::{Error, Result};
use crate::predict::{argmax_status, TurnPredictions, TurnPredictor};
use crate::qa::SlotStatus;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceState {
    pub active_intent: String,
    pub requested_slots: BTreeSet<String>,
    pub slot_values: BTreeMap<String, String>,
}

impl ServiceState {
    pub fn new() -> Self {
        Self {
            active_intent: NONE_INTENT.to_string(),
            requested_slots: BTreeSet::new(),
            slot_values: BTreeMap::new(),
        }
    }
}

/// Per-service state after one user turn.
pub type DialogueState = BTreeMap<String, ServiceState>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerThresholds {
    pub intent: f64,
    pub requested: f64,
}

impl Default for TrackerThresholds {
    fn default() -> Self {
        Self {
            intent: 0.5,
            requested: 0.5,
        }
    }
}

impl TrackerThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("intent", self.intent), ("requested", self.requested)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!(
                    "{name} threshold {t} must lie in (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// Decoded answer span in input-token positions; `(0, 0)` means no value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodedSpan {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl DecodedSpan {
    pub fn is_none(&self) -> bool {
        self.start == 0 && self.end == 0
    }
}

/// Best `(s, e)` with `lo <= s <= e < hi` and `e - s < max_answer_len`, or the
/// `(0, 0)` sentinel when it scores at least as high.
pub fn decode_span(
    start: &[f64],
    end: &[f64],
    region: (usize, usize),
    max_answer_len: usize,
) -> DecodedSpan {
    let sentinel_score = match (start.first(), end.first()) {
        (Some(a), Some(b)) => a + b,
        _ => f64::NEG_INFINITY,
    };
    let mut best = DecodedSpan {
        start: 0,
        end: 0,
        score: sentinel_score,
    };
    let (lo, hi) = (region.0.max(1), region.1.min(start.len()).min(end.len()));
    for s in lo..hi {
        for e in s..hi.min(s + max_answer_len) {
            let score = start[s] + end[e];
            if score > best.score {
                best = DecodedSpan {
                    start: s,
                    end: e,
                    score,
                };
            }
        }
    }
    best
}

fn argmax_value(values: &BTreeMap<String, f64>, order: &[String]) -> Option<String> {
    let mut best: Option<(&String, f64)> = None;
    for v in order {
        let Some(&p) = values.get(v) else { continue };
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((v, p));
        }
    }
    best.map(|(v, _)| v.clone())
}

/// Next state of one service given its predictions for this turn.
pub fn update(
    prev: &ServiceState,
    preds: &TurnPredictions,
    schema: &ServiceSchema,
    thresholds: &TrackerThresholds,
) -> Result<ServiceState> {
    preds.check_coverage(schema)?;
    let mut next = prev.clone();

    next.active_intent = NONE_INTENT.to_string();
    let mut best = thresholds.intent;
    for intent in &schema.intents {
        let p = preds.intents[&intent.name];
        if p > best {
            best = p;
            next.active_intent = intent.name.clone();
        }
    }

    next.requested_slots = schema
        .slots
        .iter()
        .filter(|s| preds.requested[&s.name] > thresholds.requested)
        .map(|s| s.name.clone())
        .collect();

    for slot in &schema.slots {
        match argmax_status(&preds.status[&slot.name]) {
            SlotStatus::None => {}
            SlotStatus::Dontcare => {
                next.slot_values
                    .insert(slot.name.clone(), DONTCARE.to_string());
            }
            SlotStatus::Active => {
                let value = if slot.is_categorical {
                    argmax_value(&preds.cat_values[&slot.name], &slot.possible_values)
                } else {
                    preds.spans[&slot.name].text.clone()
                };
                if let Some(v) = value {
                    next.slot_values.insert(slot.name.clone(), v);
                }
            }
        }
    }
    Ok(next)
}

/// Tracks a dialogue from the empty state; returns the state after every
/// user turn. Services without a frame in a turn keep their state.
pub fn run_dialogue(
    dialogue: &Dialogue,
    schemas: &SchemaSet,
    predictor: &dyn TurnPredictor,
    thresholds: &TrackerThresholds,
) -> Result<Vec<DialogueState>> {
    let mut state = DialogueState::new();
    let mut out = Vec::with_capacity(dialogue.turns.len());
    for pos in 0..dialogue.turns.len() {
        let preds = predictor.predict(dialogue, pos, schemas)?;
        state = apply_turn(&state, &preds, schemas, thresholds)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// Applies the predictions of every frame of one turn.
pub fn apply_turn(
    state: &DialogueState,
    preds: &[TurnPredictions],
    schemas: &SchemaSet,
    thresholds: &TrackerThresholds,
) -> Result<DialogueState> {
    let mut next = state.clone();
    for p in preds {
        let schema = schemas.require(&p.service)?;
        let prev = state
            .get(&p.service)
            .cloned()
            .unwrap_or_else(ServiceState::new);
        next.insert(p.service.clone(), update(&prev, p, schema, thresholds)?);
    }
    Ok(next)
}

/// Tracks dialogues from precomputed predictions, which must be grouped by
/// dialogue and ordered by turn as `predict_dialogues` emits them.
pub fn track_from_predictions(
    dialogues: &[Dialogue],
    predictions: &[TurnPredictions],
    schemas: &SchemaSet,
    thresholds: &TrackerThresholds,
) -> Result<Vec<Vec<DialogueState>>> {
    let mut by_turn: BTreeMap<(&str, usize), Vec<TurnPredictions>> = BTreeMap::new();
    for p in predictions {
        by_turn
            .entry((p.dialogue_id.as_str(), p.turn_index))
            .or_default()
            .push(p.clone());
    }
    dialogues
        .iter()
        .map(|d| {
            let mut state = DialogueState::new();
            let mut out = Vec::with_capacity(d.turns.len());
            for turn in &d.turns {
                let preds = by_turn
                    .get(&(d.dialogue_id.as_str(), turn.turn_index))
                    .map(Vec::as_slice)
                    .unwrap_or(&[]);
                let services: BTreeSet<&str> = preds.iter().map(|p| p.service.as_str()).collect();
                for f in &turn.frames {
                    if !services.contains(f.service.as_str()) {
                        return Err(Error::Alignment(format!(
                            "no predictions for {} turn {} service {}",
                            d.dialogue_id, turn.turn_index, f.service
                        )));
                    }
                }
                state = apply_turn(&state, preds, schemas, thresholds)?;
                out.push(state.clone());
            }
            Ok(out)
        })
        .collect()
}

/// One line of the states file: the tracked state of one frame of one turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRow {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub service: String,
    pub active_intent: String,
    pub requested_slots: BTreeSet<String>,
    pub slot_values: BTreeMap<String, String>,
}

/// Flattens tracked states to one row per annotated frame.
pub fn state_rows(dialogues: &[Dialogue], states: &[Vec<DialogueState>]) -> Result<Vec<StateRow>> {
    if dialogues.len() != states.len() {
        return Err(Error::Alignment(format!(
            "{} dialogues but {} state sequences",
            dialogues.len(),
            states.len()
        )));
    }
    let mut rows = Vec::new();
    for (d, seq) in dialogues.iter().zip(states) {
        if d.turns.len() != seq.len() {
            return Err(Error::Alignment(format!(
                "dialogue {} has {} turns but {} states",
                d.dialogue_id,
                d.turns.len(),
                seq.len()
            )));
        }
        for (turn, state) in d.turns.iter().zip(seq) {
            for f in &turn.frames {
                let s = state
                    .get(&f.service)
                    .cloned()
                    .unwrap_or_else(ServiceState::new);
                rows.push(StateRow {
                    dialogue_id: d.dialogue_id.clone(),
                    turn_index: turn.turn_index,
                    service: f.service.clone(),
                    active_intent: s.active_intent,
                    requested_slots: s.requested_slots,
                    slot_values: s.slot_values,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IntentDef;
    use crate::data::SlotDef;
    use crate::predict::SpanPrediction;

    fn schema() -> ServiceSchema {
        ServiceSchema {
            service_name: "Restaurants_1".into(),
            description: "restaurants".into(),
            intents: vec![
                IntentDef::new("Find", "find"),
                IntentDef::new("Reserve", "reserve"),
            ],
            slots: vec![
                SlotDef::free_form("city", "city"),
                SlotDef::categorical("seats", "party size", ["2", "4"]),
            ],
        }
    }

    fn neutral() -> TurnPredictions {
        let mut p = TurnPredictions::empty("d", 0, "Restaurants_1");
        p.intents = [("Find".into(), 0.1), ("Reserve".into(), 0.2)].into();
        p.requested = [("city".into(), 0.0), ("seats".into(), 0.0)].into();
        p.status = [
            ("city".into(), [1.0, 0.0, 0.0]),
            ("seats".into(), [1.0, 0.0, 0.0]),
        ]
        .into();
        p.cat_values = [(
            "seats".into(),
            [("2".into(), 0.0), ("4".into(), 0.0)].into(),
        )]
        .into();
        p.spans = [("city".into(), SpanPrediction::none())].into();
        p
    }

    fn prev_sf() -> ServiceState {
        let mut s = ServiceState::new();
        s.slot_values.insert("city".into(), "SF".into());
        s.requested_slots.insert("seats".into());
        s
    }

    #[test]
    fn none_status_carries_over() {
        let next = update(
            &prev_sf(),
            &neutral(),
            &schema(),
            &TrackerThresholds::default(),
        )
        .unwrap();
        assert_eq!(next.slot_values["city"], "SF");
        assert!(next.requested_slots.is_empty());
        assert_eq!(next.active_intent, NONE_INTENT);
    }

    #[test]
    fn active_categorical_takes_argmax() {
        let mut p = neutral();
        p.status.insert("seats".into(), [0.1, 0.1, 0.8]);
        p.cat_values.insert(
            "seats".into(),
            [("2".into(), 0.9), ("4".into(), 0.3)].into(),
        );
        let next = update(
            &ServiceState::new(),
            &p,
            &schema(),
            &TrackerThresholds::default(),
        )
        .unwrap();
        assert_eq!(next.slot_values["seats"], "2");
    }

    #[test]
    fn dontcare_status_sets_sentinel() {
        let mut p = neutral();
        p.status.insert("city".into(), [0.1, 0.8, 0.1]);
        let next = update(&prev_sf(), &p, &schema(), &TrackerThresholds::default()).unwrap();
        assert_eq!(next.slot_values["city"], DONTCARE);
    }

    #[test]
    fn active_span_with_sentinel_keeps_previous_value() {
        let mut p = neutral();
        p.status.insert("city".into(), [0.0, 0.0, 1.0]);
        let next = update(&prev_sf(), &p, &schema(), &TrackerThresholds::default()).unwrap();
        assert_eq!(next.slot_values["city"], "SF");
        p.spans.insert(
            "city".into(),
            SpanPrediction {
                start: 3,
                end: 4,
                score: 2.0,
                text: Some("san jose".into()),
            },
        );
        let next = update(&prev_sf(), &p, &schema(), &TrackerThresholds::default()).unwrap();
        assert_eq!(next.slot_values["city"], "san jose");
    }

    #[test]
    fn intent_and_requested_thresholds() {
        let mut p = neutral();
        p.intents.insert("Reserve".into(), 0.7);
        p.requested.insert("city".into(), 0.51);
        let next = update(
            &ServiceState::new(),
            &p,
            &schema(),
            &TrackerThresholds::default(),
        )
        .unwrap();
        assert_eq!(next.active_intent, "Reserve");
        assert_eq!(next.requested_slots, BTreeSet::from(["city".to_string()]));
    }

    #[test]
    fn coverage_mismatch_is_an_error() {
        let mut p = neutral();
        p.intents.remove("Find");
        assert!(matches!(
            update(
                &ServiceState::new(),
                &p,
                &schema(),
                &TrackerThresholds::default()
            ),
            Err(Error::Consistency(_))
        ));
    }

    fn brute_force(
        start: &[f64],
        end: &[f64],
        lo: usize,
        hi: usize,
        max_len: usize,
    ) -> (usize, usize) {
        let mut cands = vec![(0, 0)];
        for s in 0..start.len() {
            for e in 0..end.len() {
                if lo <= s && s <= e && e < hi && e - s < max_len {
                    cands.push((s, e));
                }
            }
        }
        let mut best = cands[0];
        for &(s, e) in &cands[1..] {
            if start[s] + end[e] > start[best.0] + end[best.1] {
                best = (s, e);
            }
        }
        best
    }

    #[test]
    fn decode_span_unconstrained_argmax() {
        let mut start = vec![0.0; 12];
        let mut end = vec![0.0; 12];
        start[5] = 4.0;
        end[7] = 4.0;
        let d = decode_span(&start, &end, (3, 11), 30);
        assert_eq!((d.start, d.end), (5, 7));
    }

    #[test]
    fn decode_span_constrained_matches_brute_force() {
        let mut start = vec![0.0; 12];
        let mut end = vec![0.0; 12];
        start[8] = 5.0;
        start[4] = 1.0;
        end[3] = 5.0;
        end[9] = 0.5;
        end[6] = 2.0;
        let d = decode_span(&start, &end, (3, 11), 30);
        assert_eq!((d.start, d.end), brute_force(&start, &end, 3, 11, 30));
        assert_eq!((d.start, d.end), (8, 9));
    }

    #[test]
    fn decode_span_sentinel_and_empty_region() {
        let mut start = vec![-1.0; 8];
        let mut end = vec![-1.0; 8];
        start[0] = 3.0;
        end[0] = 3.0;
        assert!(decode_span(&start, &end, (2, 7), 30).is_none());
        assert!(decode_span(&[1.0; 8], &[1.0; 8], (4, 4), 30).is_none());
    }

    proptest::proptest! {
        #[test]
        fn decode_span_equals_brute_force(
            start in proptest::collection::vec(-5.0f64..5.0, 1..20),
            seed_end in proptest::collection::vec(-5.0f64..5.0, 20),
            lo in 1usize..10, width in 0usize..12, max_len in 1usize..6,
        ) {
            let end = &seed_end[..start.len()];
            let hi = (lo + width).min(start.len());
            let d = decode_span(&start, end, (lo, hi), max_len);
            let (s, e) = brute_force(&start, end, lo, hi, max_len);
            proptest::prop_assert_eq!(d.score, start[s] + end[e]);
        }
    }

    #[test]
    fn empty_dialogue_tracks_to_empty_list() {
        struct Never;
        impl TurnPredictor for Never {
            fn predict(
                &self,
                _: &Dialogue,
                _: usize,
                _: &SchemaSet,
            ) -> Result<Vec<TurnPredictions>> {
                unreachable!()
            }
        }
        let d = Dialogue {
            dialogue_id: "d".into(),
            services: vec![],
            turns: vec![],
        };
        let schemas = SchemaSet::new([schema()]).unwrap();
        assert!(
            run_dialogue(&d, &schemas, &Never, &TrackerThresholds::default())
                .unwrap()
                .is_empty()
        );
    }
}
