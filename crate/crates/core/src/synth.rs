//! Seeded generator of small schemas and templated dialogues with exact gold
//! annotations.
//!
//! Each domain yields one seen service. Unseen services copy the slot and
//! intent descriptions of a seen domain under new names, so the two can
//! share similar slots.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::{
    mark_seen_services, Dialogue, DialogueTurn, FrameAnnotation, IntentDef, ServiceRegistry,
    ServiceSchema, SlotDef, SpanLabel, UtteranceRole, DONTCARE,
};
use crate::error::{Error, Result};
use crate::sgd_json::{write_dialogues, write_schemas};

const DOMAINS: &[&str] = &[
    "restaurant",
    "hotel",
    "flight",
    "movie",
    "bus",
    "car",
    "event",
    "song",
    "doctor",
    "salon",
    "bank",
    "apartment",
    "train",
    "ride",
    "museum",
    "concert",
    "gym",
    "dentist",
    "ferry",
    "theater",
];

const VERBS: &[&str] = &[
    "find", "book", "reserve", "buy", "rent", "search", "check", "schedule", "order", "compare",
];

const FREE_KEYWORDS: &[&str] = &[
    "city",
    "date",
    "time",
    "address",
    "street",
    "destination",
    "origin",
    "title",
    "artist",
    "venue",
    "director",
    "airline",
    "cuisine",
    "neighborhood",
    "contact",
    "location",
    "brand",
    "category",
];

const CAT_KEYWORDS: &[&str] = &[
    "price", "rating", "stars", "seats", "class", "size", "level", "payment", "mode", "tier",
];

const FREE_VALUES: &[&str] = &[
    "alder", "birch", "cedar", "dover", "elm", "fulton", "granite", "harbor", "ivy", "juniper",
    "kings", "laurel", "maple", "north", "oak", "pine", "quarry", "river", "spruce", "tide",
    "union", "valley", "willow", "york", "amber", "brook", "coral", "delta", "ember", "frost",
    "glen", "haven", "iris", "jade", "kestrel", "lumen", "marsh", "nova", "orchid", "pebble",
    "quill", "raven", "sable", "thorn", "umber", "vesper", "wren", "zephyr",
];

const CAT_VALUES: &[&str] = &[
    "cheap", "moderate", "pricey", "one", "two", "three", "four", "economy", "business", "premium",
    "basic", "standard", "deluxe", "small", "medium", "large", "cash", "card", "low", "high",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Services with training dialogues.
    pub seen_services: usize,
    /// Services that appear only in the evaluation split.
    pub unseen_services: usize,
    pub intents_per_service: usize,
    pub slots_per_service: usize,
    pub categorical_fraction: f64,
    pub values_per_categorical: usize,
    /// Dialogues generated per seen service, split into train and dev.
    pub dialogues_per_service: usize,
    /// Dialogues generated per unseen service, all in dev.
    pub unseen_dialogues_per_service: usize,
    pub dev_fraction: f64,
    pub min_turns: usize,
    pub max_turns: usize,
    /// Target fraction of slots whose status is `none` in a frame.
    pub status_negative_target: f64,
    /// Target fraction of slots not requested in a frame.
    pub requested_negative_target: f64,
    pub dontcare_prob: f64,
    /// Probability that a single-slot update answers a system question with
    /// the bare value.
    pub bare_answer_prob: f64,
    /// Probability that a single-slot update accepts a value the system offered.
    pub offer_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seen_services: 11,
            unseen_services: 3,
            intents_per_service: 3,
            slots_per_service: 8,
            categorical_fraction: 0.375,
            values_per_categorical: 3,
            dialogues_per_service: 25,
            unseen_dialogues_per_service: 8,
            dev_fraction: 0.2,
            min_turns: 3,
            max_turns: 6,
            status_negative_target: 0.89,
            requested_negative_target: 0.98,
            dontcare_prob: 0.1,
            bare_answer_prob: 0.1,
            offer_prob: 0.1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.seen_services == 0 || self.seen_services > DOMAINS.len() {
            return fail(format!("seen_services must be in 1..={}", DOMAINS.len()));
        }
        if self.unseen_services > self.seen_services {
            return fail("unseen_services cannot exceed seen_services".into());
        }
        if self.intents_per_service == 0 || self.intents_per_service > VERBS.len() {
            return fail(format!(
                "intents_per_service must be in 1..={}",
                VERBS.len()
            ));
        }
        if self.slots_per_service == 0 {
            return fail("slots_per_service must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.categorical_fraction) {
            return fail("categorical_fraction must be in [0, 1]".into());
        }
        let n_cat = self.categorical_slots();
        if n_cat > CAT_KEYWORDS.len() || self.slots_per_service - n_cat > FREE_KEYWORDS.len() {
            return fail("not enough slot keywords for the requested slot mix".into());
        }
        if n_cat > 0 && !(2..=CAT_VALUES.len()).contains(&self.values_per_categorical) {
            return fail(format!(
                "values_per_categorical must be in 2..={}",
                CAT_VALUES.len()
            ));
        }
        if self.min_turns == 0 || self.min_turns > self.max_turns {
            return fail("need 1 <= min_turns <= max_turns".into());
        }
        for (name, p) in [
            ("status_negative_target", self.status_negative_target),
            ("requested_negative_target", self.requested_negative_target),
            ("dontcare_prob", self.dontcare_prob),
            ("bare_answer_prob", self.bare_answer_prob),
            ("offer_prob", self.offer_prob),
            ("dev_fraction", self.dev_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must be in [0, 1]"));
            }
        }
        if self.bare_answer_prob + self.offer_prob > 1.0 {
            return fail("bare_answer_prob + offer_prob must not exceed 1".into());
        }
        Ok(())
    }

    fn categorical_slots(&self) -> usize {
        (self.categorical_fraction * self.slots_per_service as f64).round() as usize
    }
}

/// A generated corpus: training split over seen services and an evaluation
/// split holding held-out dialogues of seen services plus all unseen ones.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub train_schemas: Vec<ServiceSchema>,
    pub eval_schemas: Vec<ServiceSchema>,
    pub train: Vec<Dialogue>,
    pub dev: Vec<Dialogue>,
    pub registry: ServiceRegistry,
}

impl SynthCorpus {
    /// Writes `train/` and `dev/` directories in the SGD layout.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (split, schemas, dialogues) in [
            ("train", &self.train_schemas, &self.train),
            ("dev", &self.eval_schemas, &self.dev),
        ] {
            let d = dir.join(split);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            write_schemas(&d.join("schema.json"), schemas)?;
            write_dialogues(&d.join("dialogues_001.json"), dialogues)?;
        }
        Ok(())
    }

    pub fn dev_seen(&self) -> Vec<Dialogue> {
        self.dev
            .iter()
            .filter(|d| d.services.iter().all(|s| self.registry.is_seen(s)))
            .cloned()
            .collect()
    }

    pub fn dev_unseen(&self) -> Vec<Dialogue> {
        self.dev
            .iter()
            .filter(|d| d.services.iter().any(|s| !self.registry.is_seen(s)))
            .cloned()
            .collect()
    }
}

/// Per-slot surface information used by the templates.
#[derive(Clone, Debug)]
struct SlotSpec {
    name: String,
    keyword: String,
    categorical: bool,
    values: Vec<String>,
}

#[derive(Clone, Debug)]
struct ServiceSpec {
    schema: ServiceSchema,
    domain: String,
    intent_phrases: Vec<String>,
    slots: Vec<SlotSpec>,
}

fn camel(words: &[&str]) -> String {
    words
        .iter()
        .map(|w| {
            let mut c = w.chars();
            c.next()
                .map(|f| f.to_ascii_uppercase().to_string() + c.as_str())
                .unwrap_or_default()
        })
        .collect()
}

fn make_service(config: &SynthConfig, domain: &str, rng: &mut ChaCha8Rng) -> ServiceSpec {
    let n_cat = config.categorical_slots();
    let mut verbs: Vec<&str> = VERBS.to_vec();
    verbs.shuffle(rng);
    verbs.truncate(config.intents_per_service);
    let mut intents = Vec::new();
    let mut intent_phrases = Vec::new();
    for v in &verbs {
        let phrase = format!("{v} a {domain}");
        intents.push(IntentDef::new(camel(&[v, domain]), phrase.clone()));
        intent_phrases.push(phrase);
    }
    let mut free: Vec<&str> = FREE_KEYWORDS.to_vec();
    free.shuffle(rng);
    let mut cat: Vec<&str> = CAT_KEYWORDS.to_vec();
    cat.shuffle(rng);
    let mut slots = Vec::new();
    let mut specs = Vec::new();
    for kw in &cat[..n_cat] {
        let mut values: Vec<String> = CAT_VALUES
            .choose_multiple(rng, config.values_per_categorical)
            .map(|v| v.to_string())
            .collect();
        values.sort();
        slots.push(SlotDef::categorical(
            *kw,
            format!("{kw} of the {domain}"),
            values.clone(),
        ));
        specs.push(SlotSpec {
            name: kw.to_string(),
            keyword: kw.to_string(),
            categorical: true,
            values,
        });
    }
    for kw in &free[..config.slots_per_service - n_cat] {
        slots.push(SlotDef::free_form(*kw, format!("{kw} of the {domain}")));
        specs.push(SlotSpec {
            name: kw.to_string(),
            keyword: kw.to_string(),
            categorical: false,
            values: Vec::new(),
        });
    }
    ServiceSpec {
        schema: ServiceSchema {
            service_name: format!("{}_1", camel(&[domain])),
            description: format!("{domain} service"),
            intents,
            slots,
        },
        domain: domain.to_string(),
        intent_phrases,
        slots: specs,
    }
}

/// Same descriptions and values, new service, intent and slot names.
fn make_unseen(seen: &ServiceSpec) -> ServiceSpec {
    let mut spec = seen.clone();
    let d = &seen.domain;
    spec.schema.service_name = format!("{}_2", camel(&[d]));
    spec.schema.description = format!("another {d} service");
    for intent in &mut spec.schema.intents {
        intent.name = format!("{}Now", intent.name);
    }
    for (slot, s) in spec.schema.slots.iter_mut().zip(&mut spec.slots) {
        slot.name = format!("{d}_{}", slot.name);
        s.name = slot.name.clone();
    }
    spec
}

/// Builds an utterance while recording the character span of every value.
#[derive(Default)]
struct Utterance {
    text: String,
    spans: Vec<(String, usize, usize)>,
}

impl Utterance {
    fn push(&mut self, piece: &str) {
        if !self.text.is_empty() && !piece.is_empty() {
            self.text.push(' ');
        }
        self.text.push_str(piece);
    }

    fn value(&mut self, slot: &str, value: &str) {
        if !self.text.is_empty() {
            self.text.push(' ');
        }
        let start = self.text.chars().count();
        self.text.push_str(value);
        self.spans
            .push((slot.to_string(), start, self.text.chars().count()));
    }

    /// Appends `template` with `{k}` replaced by `keyword` and `{v}` by the
    /// value, recording the value span.
    fn template(&mut self, template: &str, slot: &str, keyword: &str, value: &str) {
        for word in template.split(' ') {
            match word {
                "{v}" => self.value(slot, value),
                "{k}" => self.push(keyword),
                w => self.push(w),
            }
        }
    }
}

const INFORM: &[&str] = &[
    "i want the {k} to be {v}",
    "make the {k} {v}",
    "{v} for the {k} please",
    "the {k} should be {v}",
];

const DONTCARE_TEMPLATES: &[&str] = &["any {k} is fine", "i do not care about the {k}"];

const REQUEST: &[&str] = &["what is the {k} ?", "can you tell me the {k} ?"];

const INTENT_TEMPLATES: &[&str] = &["i want to {i}", "help me {i}", "i need to {i}"];

struct Update {
    slot: usize,
    value: String,
}

fn free_value(rng: &mut ChaCha8Rng) -> String {
    let n = if rng.random_bool(0.5) { 1 } else { 2 };
    FREE_VALUES
        .choose_multiple(rng, n)
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

fn new_value(
    spec: &SlotSpec,
    current: Option<&String>,
    dontcare_prob: f64,
    rng: &mut ChaCha8Rng,
) -> String {
    if current.is_none_or(|c| c != DONTCARE) && rng.random_bool(dontcare_prob) {
        return DONTCARE.to_string();
    }
    loop {
        let v = if spec.categorical {
            spec.values.choose(rng).expect("categorical values").clone()
        } else {
            free_value(rng)
        };
        if current != Some(&v) {
            return v;
        }
    }
}

fn make_dialogue(
    config: &SynthConfig,
    spec: &ServiceSpec,
    id: String,
    updates_dist: &Binomial,
    rng: &mut ChaCha8Rng,
) -> Dialogue {
    let n_slots = spec.slots.len();
    let request_prob = ((1.0 - config.requested_negative_target) * n_slots as f64).min(1.0);
    let intent = rng.random_range(0..spec.schema.intents.len());
    let n_turns = rng.random_range(config.min_turns..=config.max_turns);
    let mut state: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut turns = Vec::new();
    // slot the system asked about in the previous turn
    let mut asked: Option<usize> = None;

    for t in 0..n_turns {
        let k = (updates_dist.sample(rng) as usize).min(n_slots);
        let mut chosen: Vec<usize> = (0..n_slots).collect();
        chosen.shuffle(rng);
        chosen.truncate(k);
        let updates: Vec<Update> = chosen
            .iter()
            .map(|&s| {
                let cur = state.get(&spec.slots[s].name).map(|v| &v[0]);
                Update {
                    slot: s,
                    value: new_value(&spec.slots[s], cur, config.dontcare_prob, rng),
                }
            })
            .collect();

        let mut sys = Utterance::default();
        let mut usr = Utterance::default();
        let single_value = updates.len() == 1 && updates[0].value != DONTCARE;
        let style = rng.random::<f64>();
        let mode = if t > 0 && single_value && style < config.offer_prob {
            1
        } else if single_value
            && asked == Some(updates[0].slot)
            && style < config.offer_prob + config.bare_answer_prob
        {
            2
        } else {
            0
        };

        if t > 0 {
            if mode == 1 {
                let u = &updates[0];
                let s = &spec.slots[u.slot];
                sys.template("how about {v} for the {k} ?", &s.name, &s.keyword, &u.value);
            } else if let Some(a) = asked {
                sys.template("which {k} would you like ?", "", &spec.slots[a].keyword, "");
            } else {
                sys.push("ok , anything else ?");
            }
        }

        let phrase = &spec.intent_phrases[intent];
        usr.push(&INTENT_TEMPLATES.choose(rng).unwrap().replace("{i}", phrase));
        match mode {
            1 => usr.push(". yes , that works"),
            2 => {
                let u = &updates[0];
                usr.push(".");
                usr.value(&spec.slots[u.slot].name, &u.value);
                usr.push("please");
            }
            _ => {
                for (i, u) in updates.iter().enumerate() {
                    usr.push(if i == 0 { "." } else { "and" });
                    let s = &spec.slots[u.slot];
                    let tpl = if u.value == DONTCARE {
                        DONTCARE_TEMPLATES.choose(rng).unwrap()
                    } else {
                        INFORM.choose(rng).unwrap()
                    };
                    usr.template(tpl, &s.name, &s.keyword, &u.value);
                }
            }
        }

        let mut requested = BTreeSet::new();
        if rng.random_bool(request_prob) {
            let r = rng.random_range(0..n_slots);
            let s = &spec.slots[r];
            usr.push(".");
            usr.template(REQUEST.choose(rng).unwrap(), "", &s.keyword, "");
            requested.insert(s.name.clone());
        }

        for u in &updates {
            state.insert(spec.slots[u.slot].name.clone(), vec![u.value.clone()]);
        }
        let categorical: BTreeSet<&str> = spec
            .slots
            .iter()
            .filter(|s| s.categorical)
            .map(|s| s.name.as_str())
            .collect();
        let mut spans = Vec::new();
        for (role, utt) in [(UtteranceRole::System, &sys), (UtteranceRole::User, &usr)] {
            for (slot, a, b) in &utt.spans {
                if !slot.is_empty() && !categorical.contains(slot.as_str()) {
                    spans.push(SpanLabel {
                        slot: slot.clone(),
                        utterance_role: role,
                        start_char: *a,
                        end_char: *b,
                    });
                }
            }
        }

        turns.push(DialogueTurn {
            dialogue_id: id.clone(),
            turn_index: t,
            system_utterance: sys.text,
            user_utterance: usr.text,
            frames: vec![FrameAnnotation {
                service: spec.schema.service_name.clone(),
                active_intent: spec.schema.intents[intent].name.clone(),
                requested_slots: requested,
                state_slot_values: state.clone(),
                turn_spans: spans,
            }],
        });

        let unfilled: Vec<usize> = (0..n_slots)
            .filter(|&s| !state.contains_key(&spec.slots[s].name))
            .collect();
        asked = if !unfilled.is_empty() && rng.random_bool(0.5) {
            unfilled.choose(rng).copied()
        } else {
            None
        };
    }
    Dialogue {
        dialogue_id: id,
        services: vec![spec.schema.service_name.clone()],
        turns,
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mean_updates = (1.0 - config.status_negative_target) * config.slots_per_service as f64;
    let trials = (2.0 * mean_updates).ceil().max(2.0) as u64;
    let updates_dist = Binomial::new(trials, (mean_updates / trials as f64).min(1.0))
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut domains: Vec<&str> = DOMAINS.to_vec();
    domains.shuffle(&mut rng);
    let seen: Vec<ServiceSpec> = domains[..config.seen_services]
        .iter()
        .map(|d| make_service(config, d, &mut rng))
        .collect();
    let unseen: Vec<ServiceSpec> = seen[..config.unseen_services]
        .iter()
        .map(make_unseen)
        .collect();

    let mut train = Vec::new();
    let mut dev = Vec::new();
    let n_dev = (config.dev_fraction * config.dialogues_per_service as f64).round() as usize;
    for spec in &seen {
        for i in 0..config.dialogues_per_service {
            let id = format!("{}_{i:04}", spec.schema.service_name);
            let d = make_dialogue(config, spec, id, &updates_dist, &mut rng);
            if i < config.dialogues_per_service - n_dev {
                train.push(d);
            } else {
                dev.push(d);
            }
        }
    }
    for spec in &unseen {
        for i in 0..config.unseen_dialogues_per_service {
            let id = format!("{}_{i:04}", spec.schema.service_name);
            dev.push(make_dialogue(config, spec, id, &updates_dist, &mut rng));
        }
    }
    let train_schemas: Vec<ServiceSchema> = seen.iter().map(|s| s.schema.clone()).collect();
    let eval_schemas: Vec<ServiceSchema> = seen
        .iter()
        .chain(&unseen)
        .map(|s| s.schema.clone())
        .collect();
    let registry = mark_seen_services(&train_schemas, &eval_schemas);
    Ok(SynthCorpus {
        train_schemas,
        eval_schemas,
        train,
        dev,
        registry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{char_slice, validate_dialogue, SchemaSet};

    fn small() -> SynthConfig {
        SynthConfig {
            seen_services: 4,
            unseen_services: 1,
            dialogues_per_service: 10,
            unseen_dialogues_per_service: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthConfig { seed: 8, ..small() };
        assert_ne!(
            generate(&small()).unwrap().train,
            generate(&other).unwrap().train
        );
    }

    #[test]
    fn spans_slice_to_gold_values() {
        let c = generate(&small()).unwrap();
        let mut n = 0;
        for d in c.train.iter().chain(&c.dev) {
            for t in &d.turns {
                for f in &t.frames {
                    for s in &f.turn_spans {
                        let text =
                            char_slice(t.utterance(s.utterance_role), s.start_char, s.end_char);
                        assert_eq!(f.state_slot_values[&s.slot], vec![text.to_string()]);
                        n += 1;
                    }
                }
            }
        }
        assert!(n > 0);
    }

    #[test]
    fn corpus_validates_and_unseen_stay_out_of_train() {
        let c = generate(&small()).unwrap();
        let schemas = SchemaSet::new(c.eval_schemas.clone()).unwrap();
        for d in c.train.iter().chain(&c.dev) {
            validate_dialogue(d, &schemas).unwrap();
        }
        assert_eq!(c.registry.seen_services.len(), 4);
        assert_eq!(c.registry.all_services.len(), 5);
        assert!(c.train.iter().all(|d| c.registry.is_seen(&d.services[0])));
        assert_eq!(c.dev_unseen().len(), 3);
    }

    #[test]
    fn infeasible_config_rejected() {
        let c = SynthConfig {
            slots_per_service: 4,
            categorical_fraction: 1.0,
            values_per_categorical: 0,
            ..Default::default()
        };
        assert!(matches!(generate(&c), Err(Error::Config(_))));
    }
}
