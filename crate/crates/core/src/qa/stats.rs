use serde::{Deserialize, Serialize};

use super::{QAExample, TaskKind, NUM_TASKS};

/// Example population per task, laid out like the usual dataset-statistics
/// table: share of each task and share of negatives within each task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub total: usize,
    pub counts: [usize; NUM_TASKS],
    pub negatives: [usize; NUM_TASKS],
}

impl TaskStats {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a QAExample>) -> Self {
        let mut stats = TaskStats::default();
        for ex in examples {
            let i = ex.task.index();
            stats.total += 1;
            stats.counts[i] += 1;
            if ex.label.is_negative() {
                stats.negatives[i] += 1;
            }
        }
        stats
    }

    /// Percent of all examples per task.
    pub fn task_ratios(&self) -> [f64; NUM_TASKS] {
        self.counts.map(|c| pct(c, self.total))
    }

    /// Percent negatives within each task.
    pub fn negative_ratios(&self) -> [f64; NUM_TASKS] {
        let mut out = [0.0; NUM_TASKS];
        for i in 0..NUM_TASKS {
            out[i] = pct(self.negatives[i], self.counts[i]);
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let names: Vec<&str> = TaskKind::ALL.iter().map(|t| t.name()).collect();
        serde_json::json!({
            "tasks": names,
            "total": self.total,
            "counts": self.counts,
            "negatives": self.negatives,
            "task_ratio_pct": self.task_ratios(),
            "negative_ratio_pct": self.negative_ratios(),
        })
    }

    /// `a:b:c:d:e` with rounded percentages.
    pub fn ratio_string(values: &[f64; NUM_TASKS]) -> String {
        values
            .iter()
            .map(|v| format!("{v:.0}"))
            .collect::<Vec<_>>()
            .join(":")
    }
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}
