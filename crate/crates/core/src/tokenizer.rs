//! WordPiece tokenization with character offsets.
//!
//! Text is split on whitespace and punctuation, then each word is broken into
//! the longest vocabulary prefixes, continuation pieces marked with `##`.
//! Every token keeps the `[start, end)` character range it covers in the
//! source string so gold character spans can be mapped onto token indices.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

const MAX_WORD_CHARS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    /// Inclusive start, in chars.
    pub start: usize,
    /// Exclusive end, in chars.
    pub end: usize,
}

/// Ids of the special tokens every tokenizer must provide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
}

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<Token>;
    fn vocab_size(&self) -> usize;
    fn special_ids(&self) -> SpecialIds;
    fn id_to_token(&self, id: u32) -> Option<&str>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate vocabulary entry {tok:?}"
                )));
            }
        }
        for special in [PAD, UNK, CLS, SEP] {
            if !index.contains_key(special) {
                return Err(Error::Validation(format!("vocabulary lacks {special}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Reads a BERT-style vocabulary file: one token per line, id = line number.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(
            text.lines()
                .map(|l| l.trim_end_matches('\r').to_string())
                .collect(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for tok in &self.tokens {
            writeln!(f, "{tok}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c, '\u{2000}'..='\u{206F}' | '\u{3000}'..='\u{303F}' | '¡' | '¿' | '«' | '»')
}

/// Whitespace/punctuation pre-tokenization: `(word, start_char, end_char)`.
pub fn split_words(text: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() || c.is_control() {
            if !current.is_empty() {
                out.push((std::mem::take(&mut current), start, i));
            }
        } else if is_punctuation(c) {
            if !current.is_empty() {
                out.push((std::mem::take(&mut current), start, i));
            }
            out.push((c.to_string(), i, i + 1));
        } else {
            if current.is_empty() {
                start = i;
            }
            current.push(c);
        }
    }
    if !current.is_empty() {
        let end = start + current.chars().count();
        out.push((current, start, end));
    }
    out
}

#[derive(Clone, Debug)]
pub struct WordPiece {
    vocab: Vocab,
    lowercase: bool,
    special: SpecialIds,
}

impl WordPiece {
    pub fn new(vocab: Vocab, lowercase: bool) -> Self {
        let special = SpecialIds {
            pad: vocab.get(PAD).expect("validated"),
            unk: vocab.get(UNK).expect("validated"),
            cls: vocab.get(CLS).expect("validated"),
            sep: vocab.get(SEP).expect("validated"),
        };
        Self {
            vocab,
            lowercase,
            special,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    fn push_word(&self, word: &str, start: usize, end: usize, out: &mut Vec<Token>) {
        let folded: String = if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        };
        let chars: Vec<char> = folded.chars().collect();
        // lowercasing may change the char count; then pieces share the word span
        let exact_offsets = chars.len() == end - start;
        if chars.len() > MAX_WORD_CHARS {
            out.push(Token {
                id: self.special.unk,
                start,
                end,
            });
            return;
        }
        let mut pieces = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let mut found = None;
            let mut stop = chars.len();
            while stop > pos {
                let mut candidate: String = chars[pos..stop].iter().collect();
                if pos > 0 {
                    candidate.insert_str(0, "##");
                }
                if let Some(id) = self.vocab.get(&candidate) {
                    found = Some((id, stop));
                    break;
                }
                stop -= 1;
            }
            match found {
                Some((id, stop)) => {
                    pieces.push((id, pos, stop));
                    pos = stop;
                }
                None => {
                    out.push(Token {
                        id: self.special.unk,
                        start,
                        end,
                    });
                    return;
                }
            }
        }
        for (id, a, b) in pieces {
            let (s, e) = if exact_offsets {
                (start + a, start + b)
            } else {
                (start, end)
            };
            out.push(Token {
                id,
                start: s,
                end: e,
            });
        }
    }
}

impl Tokenizer for WordPiece {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        for (word, start, end) in split_words(text) {
            self.push_word(&word, start, end, &mut out);
        }
        out
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn special_ids(&self) -> SpecialIds {
        self.special
    }

    fn id_to_token(&self, id: u32) -> Option<&str> {
        self.vocab.token(id)
    }
}

/// Builds a WordPiece vocabulary from a corpus: special tokens, every
/// character seen (as a word start and as a `##` continuation), then every
/// word occurring at least `min_word_count` times.
#[derive(Clone, Debug)]
pub struct VocabBuilder {
    pub min_word_count: usize,
    pub lowercase: bool,
    counts: HashMap<String, usize>,
}

impl VocabBuilder {
    pub fn new(min_word_count: usize, lowercase: bool) -> Self {
        Self {
            min_word_count: min_word_count.max(1),
            lowercase,
            counts: HashMap::new(),
        }
    }

    pub fn add_text(&mut self, text: &str) {
        for (word, _, _) in split_words(text) {
            let word = if self.lowercase {
                word.to_lowercase()
            } else {
                word
            };
            *self.counts.entry(word).or_default() += 1;
        }
    }

    pub fn build(&self) -> Vocab {
        let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP, MASK]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut chars: Vec<char> = self.counts.keys().flat_map(|w| w.chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        tokens.extend(chars.iter().map(|c| c.to_string()));
        tokens.extend(chars.iter().map(|c| format!("##{c}")));
        let mut words: Vec<(&String, usize)> = self
            .counts
            .iter()
            .filter(|(w, n)| **n >= self.min_word_count && w.chars().count() > 1)
            .map(|(w, n)| (w, *n))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        tokens.extend(words.into_iter().map(|(w, _)| w.clone()));
        Vocab::from_tokens(tokens).expect("builder emits unique tokens")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokenizer(words: &[&str]) -> WordPiece {
        let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        tokens.extend(words.iter().map(|s| s.to_string()));
        WordPiece::new(Vocab::from_tokens(tokens).unwrap(), true)
    }

    #[test]
    fn greedy_longest_match_with_offsets() {
        let wp = tokenizer(&["un", "##aff", "##able", "the", "!"]);
        let toks = wp.tokenize("The unaffable!");
        let text: Vec<&str> = toks.iter().map(|t| wp.id_to_token(t.id).unwrap()).collect();
        assert_eq!(text, ["the", "un", "##aff", "##able", "!"]);
        let spans: Vec<(usize, usize)> = toks.iter().map(|t| (t.start, t.end)).collect();
        assert_eq!(spans, [(0, 3), (4, 6), (6, 9), (9, 13), (13, 14)]);
    }

    #[test]
    fn unknown_word_becomes_single_unk() {
        let wp = tokenizer(&["a"]);
        let toks = wp.tokenize("a xyz");
        assert_eq!(toks[1].id, wp.special_ids().unk);
        assert_eq!((toks[1].start, toks[1].end), (2, 5));
    }

    #[test]
    fn built_vocab_covers_corpus_without_unk() {
        let mut b = VocabBuilder::new(2, true);
        b.add_text("I want Paris, please. Paris is nice");
        b.add_text("zanzibar");
        let wp = WordPiece::new(b.build(), true);
        let toks = wp.tokenize("paris zanzibar nz");
        assert!(toks.iter().all(|t| t.id != wp.special_ids().unk));
        // frequent word is one piece, rare word falls back to characters
        assert_eq!(wp.id_to_token(toks[0].id), Some("paris"));
        assert_eq!(wp.id_to_token(toks[1].id), Some("z"));
        assert_eq!(wp.id_to_token(toks[2].id), Some("##a"));
    }

    #[test]
    fn vocab_file_round_trip() {
        let mut b = VocabBuilder::new(1, true);
        b.add_text("hello world");
        let vocab = b.build();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        vocab.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), vocab);
    }
}
