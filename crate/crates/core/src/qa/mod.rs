//! Multi-pass question-answering examples.
//!
//! Every schema element becomes one encoder input per turn: the element's
//! name and description (or value) form sequence 1, the turn's utterances form
//! sequence 2. Each example trains exactly one of the five task heads.

mod balance;
mod build;
mod sequence;
mod stats;

use serde::{Deserialize, Serialize};

pub use balance::balance_status_examples;
pub use build::{build_dialogue_examples, build_examples, slot_status, BuildStats, ExampleConfig};
pub use sequence::{
    align_span, build_sequence_pair, OffsetMap, SequencePair, TokenOrigin, FIELD_SEPARATOR,
};
pub use stats::TaskStats;

pub const NUM_TASKS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskKind {
    Intent,
    Requested,
    Status,
    CatValue,
    Span,
}

impl TaskKind {
    pub const ALL: [TaskKind; NUM_TASKS] = [
        TaskKind::Intent,
        TaskKind::Requested,
        TaskKind::Status,
        TaskKind::CatValue,
        TaskKind::Span,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Intent => "INTENT",
            TaskKind::Requested => "REQUESTED",
            TaskKind::Status => "STATUS",
            TaskKind::CatValue => "CAT_VALUE",
            TaskKind::Span => "SPAN",
        }
    }

    pub fn loss_mask(self) -> [u8; NUM_TASKS] {
        let mut mask = [0; NUM_TASKS];
        mask[self.index()] = 1;
        mask
    }
}

/// Per-turn slot status.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum SlotStatus {
    #[default]
    None,
    Dontcare,
    Active,
}

impl SlotStatus {
    pub const ALL: [SlotStatus; 3] = [SlotStatus::None, SlotStatus::Dontcare, SlotStatus::Active];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelPayload {
    Binary(u8),
    Status(SlotStatus),
    /// Token indices into the full input; `(0, 0)` means no span.
    Span(usize, usize),
}

impl LabelPayload {
    pub const NO_SPAN: LabelPayload = LabelPayload::Span(0, 0);

    /// Negative as counted in dataset statistics and balancing.
    pub fn is_negative(&self) -> bool {
        matches!(
            self,
            LabelPayload::Binary(0)
                | LabelPayload::Status(SlotStatus::None)
                | LabelPayload::Span(0, 0)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExampleKeys {
    pub service: String,
    /// Intent or slot name.
    pub element: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    pub dialogue_id: String,
    pub turn_index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub task: TaskKind,
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub label: LabelPayload,
    pub loss_mask: [u8; NUM_TASKS],
    pub keys: ExampleKeys,
    /// Sequence-2 character offsets; only present on freshly built examples.
    #[serde(skip)]
    pub offsets: OffsetMap,
}

impl QAExample {
    pub fn valid_length(&self) -> usize {
        self.token_ids.len()
    }

    /// `[lo, hi)` token range of sequence 2, excluding its closing `[SEP]`.
    pub fn seq2_region(&self) -> (usize, usize) {
        let lo = self
            .segment_ids
            .iter()
            .position(|&s| s == 1)
            .unwrap_or(self.token_ids.len());
        let hi = self.token_ids.len().saturating_sub(1).max(lo);
        (lo, hi)
    }

    /// The task whose loss this example contributes, read from the mask.
    pub fn active_task(&self) -> Option<TaskKind> {
        let mut active = self.loss_mask.iter().enumerate().filter(|(_, &m)| m == 1);
        let first = active.next()?;
        if active.next().is_some() || self.loss_mask.iter().any(|&m| m > 1) {
            return None;
        }
        Some(TaskKind::ALL[first.0])
    }
}
