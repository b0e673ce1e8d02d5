//! Intent accuracy, requested-slot F1, average and joint goal accuracy, per
//! frame, with seen/unseen buckets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Dialogue, SchemaSet, ServiceRegistry, SlotDef};
use crate::error::{Error, Result};
use crate::tracker::StateRow;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[default]
    Strict,
    Fuzzy,
}

/// Minimum token F1 for a fuzzy non-categorical match.
pub const FUZZY_THRESHOLD: f64 = 0.9;

fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Token-level F1 between two normalized strings.
pub fn token_f1(a: &str, b: &str) -> f64 {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &tb {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &ta {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    2.0 * common as f64 / (ta.len() + tb.len()) as f64
}

/// Categorical values compare case-sensitively; free-form values compare
/// after lowercasing and whitespace normalization, exactly or by token F1.
pub fn value_match(
    predicted: &str,
    gold: &[String],
    slot: Option<&SlotDef>,
    mode: MatchMode,
) -> bool {
    if slot.is_some_and(|s| s.is_categorical) {
        return gold.iter().any(|g| g == predicted);
    }
    let p = normalize_text(predicted);
    gold.iter().any(|g| {
        let g = normalize_text(g);
        match mode {
            MatchMode::Strict => g == p,
            MatchMode::Fuzzy => g == p || token_f1(&p, &g) >= FUZZY_THRESHOLD,
        }
    })
}

/// Gold and predicted state of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEval {
    pub service: String,
    pub seen: bool,
    pub gold_intent: String,
    pub pred_intent: String,
    pub gold_requested: BTreeSet<String>,
    pub pred_requested: BTreeSet<String>,
    pub gold_values: BTreeMap<String, Vec<String>>,
    pub pred_values: BTreeMap<String, String>,
    /// Slot definitions of the service, for categorical comparison.
    pub slots: BTreeMap<String, SlotDef>,
}

impl FrameEval {
    fn matches(&self, slot: &str, mode: MatchMode) -> bool {
        match (self.pred_values.get(slot), self.gold_values.get(slot)) {
            (Some(p), Some(g)) => value_match(p, g, self.slots.get(slot), mode),
            _ => false,
        }
    }

    pub fn joint_correct(&self, mode: MatchMode) -> bool {
        let keys: BTreeSet<&String> = self
            .gold_values
            .keys()
            .chain(self.pred_values.keys())
            .collect();
        keys.into_iter().all(|k| self.matches(k, mode))
    }

    /// (correct, total) over gold assignments.
    pub fn assignment_counts(&self, mode: MatchMode) -> (usize, usize) {
        let correct = self
            .gold_values
            .keys()
            .filter(|k| self.matches(k, mode))
            .count();
        (correct, self.gold_values.len())
    }

    pub fn requested_f1(&self) -> f64 {
        let ng = self.gold_requested.len();
        let np = self.pred_requested.len();
        if ng == 0 && np == 0 {
            return 1.0;
        }
        let tp = self
            .gold_requested
            .intersection(&self.pred_requested)
            .count();
        2.0 * tp as f64 / (ng + np) as f64
    }
}

/// Pairs every gold frame with its tracked state row.
pub fn align_frames(
    dialogues: &[Dialogue],
    rows: &[StateRow],
    schemas: &SchemaSet,
    registry: &ServiceRegistry,
) -> Result<Vec<FrameEval>> {
    let mut by_key: BTreeMap<(&str, usize, &str), &StateRow> = BTreeMap::new();
    for r in rows {
        if by_key
            .insert(
                (r.dialogue_id.as_str(), r.turn_index, r.service.as_str()),
                r,
            )
            .is_some()
        {
            return Err(Error::Alignment(format!(
                "duplicate state for {} turn {} service {}",
                r.dialogue_id, r.turn_index, r.service
            )));
        }
    }
    let mut out = Vec::new();
    for d in dialogues {
        for t in &d.turns {
            for f in &t.frames {
                let row = by_key
                    .remove(&(d.dialogue_id.as_str(), t.turn_index, f.service.as_str()))
                    .ok_or_else(|| {
                        Error::Alignment(format!(
                            "no predicted state for {} turn {} service {}",
                            d.dialogue_id, t.turn_index, f.service
                        ))
                    })?;
                let slots = schemas
                    .get(&f.service)
                    .map(|s| {
                        s.slots
                            .iter()
                            .map(|sl| (sl.name.clone(), sl.clone()))
                            .collect()
                    })
                    .unwrap_or_default();
                out.push(FrameEval {
                    service: f.service.clone(),
                    seen: registry.is_seen(&f.service),
                    gold_intent: f.active_intent.clone(),
                    pred_intent: row.active_intent.clone(),
                    gold_requested: f.requested_slots.clone(),
                    pred_requested: row.requested_slots.clone(),
                    gold_values: f.state_slot_values.clone(),
                    pred_values: row.slot_values.clone(),
                    slots,
                });
            }
        }
    }
    if let Some(((d, t, s), _)) = by_key.into_iter().next() {
        return Err(Error::Alignment(format!(
            "predicted state for {d} turn {t} service {s} has no gold frame"
        )));
    }
    Ok(out)
}

/// A metric over all frames and over the seen and unseen buckets. Empty
/// buckets are NaN with count 0.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Bucketed {
    pub all: f64,
    pub seen: f64,
    pub unseen: f64,
    pub count_all: usize,
    pub count_seen: usize,
    pub count_unseen: usize,
}

#[derive(Default)]
struct Acc {
    sum: [f64; 3],
    n: [usize; 3],
}

impl Acc {
    fn add(&mut self, seen: bool, value: f64, weight: usize) {
        let b = if seen { 1 } else { 2 };
        for i in [0, b] {
            self.sum[i] += value;
            self.n[i] += weight;
        }
    }

    fn finish(self) -> Bucketed {
        let f = |i: usize| {
            if self.n[i] == 0 {
                f64::NAN
            } else {
                self.sum[i] / self.n[i] as f64
            }
        };
        Bucketed {
            all: f(0),
            seen: f(1),
            unseen: f(2),
            count_all: self.n[0],
            count_seen: self.n[1],
            count_unseen: self.n[2],
        }
    }
}

pub fn joint_goal_accuracy(frames: &[FrameEval], mode: MatchMode) -> Bucketed {
    let mut acc = Acc::default();
    for f in frames {
        acc.add(f.seen, f.joint_correct(mode) as u8 as f64, 1);
    }
    acc.finish()
}

/// Counts are gold assignments, not frames.
pub fn average_goal_accuracy(frames: &[FrameEval], mode: MatchMode) -> Bucketed {
    let mut acc = Acc::default();
    for f in frames {
        let (c, n) = f.assignment_counts(mode);
        acc.add(f.seen, c as f64, n);
    }
    acc.finish()
}

pub fn requested_slot_f1(frames: &[FrameEval]) -> Bucketed {
    let mut acc = Acc::default();
    for f in frames {
        acc.add(f.seen, f.requested_f1(), 1);
    }
    acc.finish()
}

pub fn intent_accuracy(frames: &[FrameEval]) -> Bucketed {
    let mut acc = Acc::default();
    for f in frames {
        acc.add(f.seen, (f.gold_intent == f.pred_intent) as u8 as f64, 1);
    }
    acc.finish()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricSet {
    pub intent_accuracy: Bucketed,
    pub requested_slot_f1: Bucketed,
    pub average_ga: Bucketed,
    pub joint_ga: Bucketed,
}

impl MetricSet {
    pub fn compute(frames: &[FrameEval], mode: MatchMode) -> Self {
        Self {
            intent_accuracy: intent_accuracy(frames),
            requested_slot_f1: requested_slot_f1(frames),
            average_ga: average_goal_accuracy(frames, mode),
            joint_ga: joint_goal_accuracy(frames, mode),
        }
    }
}

/// Both matching modes side by side; `primary` names the one selected.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub primary: MatchMode,
    pub frames: usize,
    pub seen_frames: usize,
    pub unseen_frames: usize,
    pub strict: MetricSet,
    pub fuzzy: MetricSet,
}

impl MetricsReport {
    pub fn compute(frames: &[FrameEval], primary: MatchMode) -> Self {
        let seen = frames.iter().filter(|f| f.seen).count();
        Self {
            primary,
            frames: frames.len(),
            seen_frames: seen,
            unseen_frames: frames.len() - seen,
            strict: MetricSet::compute(frames, MatchMode::Strict),
            fuzzy: MetricSet::compute(frames, MatchMode::Fuzzy),
        }
    }

    pub fn primary_set(&self) -> &MetricSet {
        match self.primary {
            MatchMode::Strict => &self.strict,
            MatchMode::Fuzzy => &self.fuzzy,
        }
    }
}

fn pct(v: f64) -> String {
    if v.is_nan() {
        "n/a".into()
    } else {
        format!("{:.1}", v * 100.0)
    }
}

fn cell(b: &Bucketed) -> String {
    format!("{}({}/{})", pct(b.all), pct(b.seen), pct(b.unseen))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "frames: {} (seen {} / unseen {})",
            self.frames, self.seen_frames, self.unseen_frames
        )?;
        writeln!(
            f,
            "{:<8} {:<20} {:<20} {:<20} {:<20}",
            "match", "intent acc", "req slot F1", "average GA", "joint GA"
        )?;
        for (name, set) in [("strict", &self.strict), ("fuzzy", &self.fuzzy)] {
            writeln!(
                f,
                "{:<8} {:<20} {:<20} {:<20} {:<20}",
                name,
                cell(&set.intent_accuracy),
                cell(&set.requested_slot_f1),
                cell(&set.average_ga),
                cell(&set.joint_ga)
            )?;
        }
        Ok(())
    }
}
