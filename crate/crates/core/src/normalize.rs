//! Schema-name normalization: `FindRestaurant` and `number_of_seats` become
//! `find restaurant` and `number of seats` in model inputs. Identifiers stay
//! untouched; only `display_name` is set.

use crate::data::ServiceSchema;

/// Splits camel case, snake case, kebab case and letter/digit boundaries into
/// lowercase space-separated words.
pub fn split_name(name: &str) -> String {
    let chars: Vec<char> = name.chars().collect();
    let mut words: Vec<String> = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c == '_' || c == '-' || c.is_whitespace() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            continue;
        }
        if let Some(&prev) = i.checked_sub(1).map(|j| &chars[j]) {
            let next = chars.get(i + 1).copied();
            let boundary = (c.is_uppercase() && (prev.is_lowercase() || prev.is_ascii_digit()))
                || (c.is_uppercase()
                    && prev.is_uppercase()
                    && next.is_some_and(|n| n.is_lowercase()))
                || (c.is_ascii_digit() && prev.is_alphabetic())
                || (c.is_alphabetic() && prev.is_ascii_digit());
            if boundary && !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
        }
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        words.push(current);
    }
    words.join(" ")
}

/// Returns a copy whose intents and slots carry normalized display names.
/// With `enabled == false` the schema is returned unchanged.
pub fn normalize_schema_names(schema: &ServiceSchema, enabled: bool) -> ServiceSchema {
    let mut out = schema.clone();
    if !enabled {
        return out;
    }
    for intent in &mut out.intents {
        intent.display_name = Some(split_name(intent.input_name()));
    }
    for slot in &mut out.slots {
        slot.display_name = Some(split_name(slot.input_name()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{IntentDef, SlotDef};
    use proptest::prelude::*;

    #[test]
    fn splits_known_names() {
        assert_eq!(split_name("FindRestaurant"), "find restaurant");
        assert_eq!(split_name("number_of_seats"), "number of seats");
        assert_eq!(split_name("GetRideID"), "get ride id");
        assert_eq!(split_name("Restaurants_1"), "restaurants 1");
        assert_eq!(split_name("city"), "city");
    }

    #[test]
    fn disabled_is_identity() {
        let schema = ServiceSchema {
            service_name: "Restaurants_1".into(),
            description: "restaurants".into(),
            intents: vec![IntentDef::new("FindRestaurant", "find one")],
            slots: vec![SlotDef::free_form("city", "the city")],
        };
        assert_eq!(normalize_schema_names(&schema, false), schema);
        let normalized = normalize_schema_names(&schema, true);
        assert_eq!(normalized.intents[0].name, "FindRestaurant");
        assert_eq!(normalized.intents[0].input_name(), "find restaurant");
        assert_eq!(normalized.slots[0].input_name(), "city");
        assert_eq!(normalize_schema_names(&normalized, true), normalized);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(name in "[A-Za-z0-9_ -]{0,24}") {
            let once = split_name(&name);
            prop_assert_eq!(split_name(&once), once);
        }
    }
}
