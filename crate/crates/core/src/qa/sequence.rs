use crate::data::UtteranceRole;
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

/// Separator placed between the fields of sequence 1.
pub const FIELD_SEPARATOR: &str = " : ";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenOrigin {
    pub role: UtteranceRole,
    pub start_char: usize,
    pub end_char: usize,
}

/// Where the sequence-2 tokens came from. `origins` lists every sequence-2
/// token before truncation; the first `kept` of them are in the input,
/// starting at token index `seq2_start`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OffsetMap {
    pub seq2_start: usize,
    pub origins: Vec<TokenOrigin>,
    pub kept: usize,
}

impl OffsetMap {
    /// Origin of the input token at `index`, if it is a kept sequence-2 token.
    pub fn origin(&self, index: usize) -> Option<TokenOrigin> {
        let rel = index.checked_sub(self.seq2_start)?;
        if rel < self.kept {
            Some(self.origins[rel])
        } else {
            None
        }
    }

    pub fn is_truncated(&self) -> bool {
        self.kept < self.origins.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequencePair {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub offsets: OffsetMap,
}

/// Lays out `[CLS] seq1 [SEP] seq2 [SEP]`.
///
/// Sequence 1 is the parts joined by `" : "` and is never truncated; if it
/// does not fit, the example is unbuildable. Sequence 2 is the non-empty
/// utterances in order, truncated from the right to fit `max_len`.
pub fn build_sequence_pair(
    seq1_parts: &[&str],
    seq2_utterances: &[(UtteranceRole, &str)],
    tokenizer: &dyn Tokenizer,
    max_len: usize,
) -> Result<SequencePair> {
    if seq1_parts.is_empty() {
        return Err(Error::InvalidExample("sequence 1 has no parts".into()));
    }
    let special = tokenizer.special_ids();
    let seq1 = tokenizer.tokenize(&seq1_parts.join(FIELD_SEPARATOR));
    let needed = seq1.len() + 3;
    if needed > max_len {
        return Err(Error::Unbuildable { needed, max_len });
    }

    let mut seq2_ids = Vec::new();
    let mut origins = Vec::new();
    for &(role, text) in seq2_utterances {
        for tok in tokenizer.tokenize(text) {
            seq2_ids.push(tok.id);
            origins.push(TokenOrigin {
                role,
                start_char: tok.start,
                end_char: tok.end,
            });
        }
    }
    let kept = seq2_ids.len().min(max_len - needed);

    let mut token_ids = Vec::with_capacity(needed + kept);
    token_ids.push(special.cls);
    token_ids.extend(seq1.iter().map(|t| t.id));
    token_ids.push(special.sep);
    let seq2_start = token_ids.len();
    token_ids.extend_from_slice(&seq2_ids[..kept]);
    token_ids.push(special.sep);

    let mut segment_ids = vec![0u8; seq2_start];
    segment_ids.resize(token_ids.len(), 1);

    Ok(SequencePair {
        token_ids,
        segment_ids,
        offsets: OffsetMap {
            seq2_start,
            origins,
            kept,
        },
    })
}

/// Smallest window of sequence-2 tokens whose characters cover the span.
/// Returns `(0, 0)` when the span is not (fully) present in the input.
pub fn align_span(
    role: UtteranceRole,
    start_char: usize,
    end_char: usize,
    offsets: &OffsetMap,
) -> (usize, usize) {
    let in_role = || {
        offsets
            .origins
            .iter()
            .enumerate()
            .filter(move |(_, o)| o.role == role)
    };
    let first = in_role()
        .find(|(_, o)| o.end_char > start_char)
        .map(|(i, _)| i);
    let last = in_role()
        .filter(|(_, o)| o.start_char < end_char)
        .map(|(i, _)| i)
        .next_back();
    match (first, last) {
        (Some(i), Some(j)) if i <= j && j < offsets.kept => {
            (offsets.seq2_start + i, offsets.seq2_start + j)
        }
        _ => (0, 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{Vocab, WordPiece, CLS, PAD, SEP, UNK};

    fn wp(words: &[&str]) -> WordPiece {
        let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|s| s.to_string()));
        WordPiece::new(Vocab::from_tokens(tokens).unwrap(), true)
    }

    fn words(tok: &WordPiece, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| tok.id_to_token(i).unwrap().to_string())
            .collect()
    }

    #[test]
    fn layout_with_system_and_user() {
        let tok = wp(&["find", "restaurant", ":", "a", "where", "?", "in", "paris"]);
        let pair = build_sequence_pair(
            &["find restaurant", "Find a restaurant"],
            &[
                (UtteranceRole::System, "where?"),
                (UtteranceRole::User, "in Paris"),
            ],
            &tok,
            128,
        )
        .unwrap();
        assert_eq!(
            words(&tok, &pair.token_ids),
            [
                "[CLS]",
                "find",
                "restaurant",
                ":",
                "find",
                "a",
                "restaurant",
                "[SEP]",
                "where",
                "?",
                "in",
                "paris",
                "[SEP]"
            ]
        );
        assert_eq!(pair.segment_ids, [0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(pair.offsets.seq2_start, 8);
        assert_eq!(pair.offsets.origin(11).unwrap().role, UtteranceRole::User);
    }

    #[test]
    fn empty_system_utterance_keeps_layout() {
        let tok = wp(&["city", "paris"]);
        let a = build_sequence_pair(
            &["city"],
            &[(UtteranceRole::System, ""), (UtteranceRole::User, "paris")],
            &tok,
            16,
        )
        .unwrap();
        let b =
            build_sequence_pair(&["city"], &[(UtteranceRole::User, "paris")], &tok, 16).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            words(&tok, &a.token_ids),
            ["[CLS]", "city", "[SEP]", "paris", "[SEP]"]
        );
    }

    #[test]
    fn truncates_sequence_two_from_the_right() {
        let tok = wp(&["a", "b", "c", "d", "x"]);
        let pair =
            build_sequence_pair(&["x"], &[(UtteranceRole::User, "a b c d")], &tok, 6).unwrap();
        assert_eq!(
            words(&tok, &pair.token_ids),
            ["[CLS]", "x", "[SEP]", "a", "b", "[SEP]"]
        );
        assert!(pair.offsets.is_truncated());
        // "d" fell off the end
        assert_eq!(align_span(UtteranceRole::User, 6, 7, &pair.offsets), (0, 0));
        assert_eq!(align_span(UtteranceRole::User, 2, 3, &pair.offsets), (4, 4));
    }

    #[test]
    fn oversized_sequence_one_is_unbuildable() {
        let tok = wp(&["a"]);
        let err =
            build_sequence_pair(&["a a a a"], &[(UtteranceRole::User, "a")], &tok, 6).unwrap_err();
        assert!(matches!(
            err,
            Error::Unbuildable {
                needed: 7,
                max_len: 6
            }
        ));
    }

    /// Reference: enumerate every window and keep the shortest that covers the span.
    fn brute_force_align(
        role: UtteranceRole,
        s: usize,
        e: usize,
        offsets: &OffsetMap,
    ) -> (usize, usize) {
        let kept = &offsets.origins[..offsets.kept];
        let mut best: Option<(usize, usize)> = None;
        for i in 0..kept.len() {
            for j in i..kept.len() {
                let window = &kept[i..=j];
                if window.iter().any(|o| o.role != role) {
                    continue;
                }
                let covers = window[0].start_char <= s && window[window.len() - 1].end_char >= e;
                if covers && best.is_none_or(|(a, b)| j - i < b - a) {
                    best = Some((i, j));
                }
            }
        }
        best.map_or((0, 0), |(i, j)| {
            (offsets.seq2_start + i, offsets.seq2_start + j)
        })
    }

    #[test]
    fn mid_token_span_expands_to_enclosing_pieces() {
        // "sanfrancisco" splits into san ##fran ##cisco
        let tok = wp(&["in", "san", "##fran", "##cisco", "city"]);
        let pair = build_sequence_pair(
            &["city"],
            &[(UtteranceRole::User, "in sanfrancisco")],
            &tok,
            32,
        )
        .unwrap();
        // "franc" starts inside ##fran and ends inside ##cisco
        let got = align_span(UtteranceRole::User, 6, 11, &pair.offsets);
        assert_eq!(
            got,
            brute_force_align(UtteranceRole::User, 6, 11, &pair.offsets)
        );
        assert_eq!(got, (5, 6));
        for s in 0..15 {
            for e in s + 1..=15 {
                let text = "in sanfrancisco";
                if text.chars().nth(s) == Some(' ') || text.chars().nth(e - 1) == Some(' ') {
                    continue;
                }
                assert_eq!(
                    align_span(UtteranceRole::User, s, e, &pair.offsets),
                    brute_force_align(UtteranceRole::User, s, e, &pair.offsets),
                    "span {s}..{e}"
                );
            }
        }
    }

    #[test]
    fn exact_token_boundary() {
        let tok = wp(&[
            "x", "i", "want", "it", "to", "go", "new", "york", "city", "now",
        ]);
        let pair = build_sequence_pair(
            &["x"],
            &[
                (UtteranceRole::System, "i want it"),
                (UtteranceRole::User, "to go to new york city now"),
            ],
            &tok,
            64,
        )
        .unwrap();
        // seq2 starts at 3; system tokens 3..=5; user "to"=6 "go"=7 "to"=8 "new"=9 "york"=10 "city"=11
        assert_eq!(
            align_span(UtteranceRole::User, 9, 22, &pair.offsets),
            (9, 11)
        );
        assert_eq!(
            align_span(UtteranceRole::System, 2, 6, &pair.offsets),
            (4, 4)
        );
    }
}
