//! Synthetic whitespace-level vocabulary shared by the generators, the
//! template renderer, and the model.
//!
//! Layout (ids are assigned in this order, so they are stable for a given
//! symbol/category count): control markers, digits, instruction words,
//! payload symbols a..z, category names.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Markers, in id order from 0.
const SPECIALS: &[&str] = &[
    "<bos>", "<eos>", "[INST]", "[/INST]", "<<SYS>>", "<</SYS>>", "<SPEECH>", "</SPEECH>",
    "<frame>", "<nl>", "###", "task", ":", "=>", ",", ";",
];

/// Instruction word inventory. Train and held-out prompt banks both draw
/// from this inventory so unseen prompts contain no unseen words.
const WORDS: &[&str] = &[
    "after", "also", "and", "answer", "aside", "assistant", "at", "audio", "begin", "category",
    "clip", "code", "condense", "convert", "decide", "disregard", "down", "finally", "first",
    "fits", "following", "from", "give", "heard", "helpful", "holds", "identify", "ignore",
    "ignoring", "initially", "into", "is", "its", "lastly", "listen", "me", "moreover", "name",
    "next", "now", "of", "out", "please", "position", "produce", "provide", "read", "recording",
    "repeat", "say", "sits", "skip", "sound", "speaker", "speech", "spoken", "summary", "symbol",
    "tell", "that", "the", "then", "these", "this", "to", "transcript", "translation", "turn",
    "what", "which", "with", "words", "write",
];

const CATEGORY_NAMES: &[&str] = &[
    "calm", "happy", "angry", "sad", "bright", "dark", "soft", "loud",
];

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

/// Token table with whitespace tokenization. Newlines round-trip through
/// the `<nl>` marker.
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    n_symbols: usize,
    n_categories: usize,
    symbol_base: usize,
    category_base: usize,
    digit_base: usize,
}

impl Vocab {
    pub fn build(n_symbols: usize, n_categories: usize) -> Result<Vocab> {
        if n_symbols == 0 || n_symbols > ALPHABET.len() {
            return Err(Error::invalid("vocab: symbols must be in 1..=26"));
        }
        if n_categories == 0 || n_categories > CATEGORY_NAMES.len() {
            return Err(Error::invalid("vocab: categories must be in 1..=8"));
        }
        let mut tokens: Vec<String> = Vec::new();
        tokens.extend(SPECIALS.iter().map(|s| s.to_string()));
        let digit_base = tokens.len();
        tokens.extend((1..=9).map(|d| d.to_string()));
        tokens.extend(WORDS.iter().map(|s| s.to_string()));
        let symbol_base = tokens.len();
        tokens.extend(
            ALPHABET[..n_symbols]
                .iter()
                .map(|&b| (b as char).to_string()),
        );
        let category_base = tokens.len();
        tokens.extend(CATEGORY_NAMES[..n_categories].iter().map(|s| s.to_string()));

        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(alloc::format!("vocab: duplicate token {t}")));
            }
        }
        Ok(Vocab {
            tokens,
            index,
            n_symbols,
            n_categories,
            symbol_base,
            category_base,
            digit_base,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        self.index.get(token).copied().ok_or_else(|| Error::UnknownToken {
            token: token.to_string(),
        })
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn bos(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        1
    }

    pub fn inst_open(&self) -> usize {
        2
    }

    pub fn inst_close(&self) -> usize {
        3
    }

    pub fn sys_open(&self) -> usize {
        4
    }

    pub fn sys_close(&self) -> usize {
        5
    }

    pub fn speech_open(&self) -> usize {
        6
    }

    pub fn speech_close(&self) -> usize {
        7
    }

    pub fn frame(&self) -> usize {
        8
    }

    pub fn newline(&self) -> usize {
        9
    }

    pub fn section_mark(&self) -> usize {
        10
    }

    pub fn task_word(&self) -> usize {
        11
    }

    pub fn colon(&self) -> usize {
        12
    }

    pub fn arrow(&self) -> usize {
        13
    }

    /// Token id of a digit 1..=9.
    pub fn digit(&self, d: usize) -> Result<usize> {
        if !(1..=9).contains(&d) {
            return Err(Error::invalid(alloc::format!("digit {d} out of range 1..=9")));
        }
        Ok(self.digit_base + d - 1)
    }

    /// Value of a digit token, if it is one.
    pub fn digit_value(&self, id: usize) -> Option<usize> {
        (self.digit_base..self.digit_base + 9)
            .contains(&id)
            .then(|| id - self.digit_base + 1)
    }

    pub fn symbol_id(&self, sym: u8) -> usize {
        debug_assert!((sym as usize) < self.n_symbols);
        self.symbol_base + sym as usize
    }

    pub fn symbol_text(&self, sym: u8) -> &str {
        self.token(self.symbol_id(sym))
    }

    pub fn category_id(&self, cat: u8) -> usize {
        debug_assert!((cat as usize) < self.n_categories);
        self.category_base + cat as usize
    }

    pub fn category_text(&self, cat: u8) -> &str {
        self.token(self.category_id(cat))
    }

    /// Whitespace tokenization; literal newlines map to the `<nl>` token.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let normalized = text.replace('\n', " <nl> ");
        normalized.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Inverse of [`Vocab::tokenize`] for canonical (single-spaced) text.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == self.newline() {
                // trim the joiner space before a line break
                if out.ends_with(' ') {
                    out.pop();
                }
                out.push('\n');
                continue;
            }
            if !out.is_empty() && !out.ends_with('\n') {
                out.push(' ');
            }
            out.push_str(self.token(id));
        }
        out
    }

    /// Space-joined text of a symbol sequence.
    pub fn symbols_text(&self, symbols: &[u8]) -> String {
        let parts: Vec<&str> = symbols.iter().map(|&s| self.symbol_text(s)).collect();
        parts.join(" ")
    }
}
