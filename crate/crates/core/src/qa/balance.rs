use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{QAExample, TaskKind};

/// Caps the negative STATUS examples of every (service, slot) at the number of
/// positives for that slot, keeping at least one. Dropped negatives are chosen
/// uniformly with a seeded RNG; everything else passes through in order.
pub fn balance_status_examples(examples: Vec<QAExample>, seed: u64) -> Vec<QAExample> {
    let mut groups: BTreeMap<(&str, &str), (usize, Vec<usize>)> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        if ex.task != TaskKind::Status {
            continue;
        }
        let entry = groups
            .entry((ex.keys.service.as_str(), ex.keys.element.as_str()))
            .or_default();
        if ex.label.is_negative() {
            entry.1.push(i);
        } else {
            entry.0 += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropped = BTreeSet::new();
    for (positives, negatives) in groups.values() {
        let keep = negatives.len().min((*positives).max(1));
        if keep == negatives.len() {
            continue;
        }
        let chosen: BTreeSet<usize> = rand::seq::index::sample(&mut rng, negatives.len(), keep)
            .into_iter()
            .collect();
        dropped.extend(
            negatives
                .iter()
                .enumerate()
                .filter(|(k, _)| !chosen.contains(k))
                .map(|(_, &i)| i),
        );
    }

    examples
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, ex)| ex)
        .collect()
}
