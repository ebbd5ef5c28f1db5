//! Word-level tokenizer with an `[UNK]` fallback.
//!
//! Text is lowercased and split on whitespace; runs of alphanumeric
//! characters form words and every other visible character is a token of
//! its own. Id 0 is `[PAD]`, id 1 is `[UNK]`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::record::TextRecord;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// Smallest vocabulary accepted by [`build_vocab`].
pub const MIN_VOCAB: usize = 16;

/// Byte spans of the tokens in `text`, in order.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            spans.push((s, i));
        }
        if !c.is_whitespace() {
            spans.push((i, i + c.len_utf8()));
        }
    }
    if let Some(s) = word_start {
        spans.push((s, text.len()));
    }
    spans
}

/// Lowercased tokens of `text`.
pub fn pretokenize(text: &str) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .map(|(s, e)| text[s..e].to_lowercase())
        .collect()
}

/// Cuts `text` after its first `max_tokens` tokens. Returns the kept text,
/// the number of kept tokens, and whether anything was dropped.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> (&str, usize, bool) {
    let spans = token_spans(text);
    if spans.len() <= max_tokens {
        return (text, spans.len(), false);
    }
    let end = if max_tokens == 0 { 0 } else { spans[max_tokens - 1].1 };
    (&text[..end], max_tokens, true)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
    max_len: usize,
}

/// Token ids padded to `max_len` plus the matching real-token mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl Encoding {
    /// Number of real (unpadded) tokens.
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ids with the padded tail removed.
    pub fn trimmed(&self) -> (&[u32], &[bool]) {
        let n = self.len();
        (&self.ids[..n], &self.mask[..n])
    }
}

impl Tokenizer {
    /// Builds a tokenizer from an explicit token list whose first two
    /// entries must be `[PAD]` and `[UNK]`.
    pub fn from_tokens(tokens: Vec<String>, max_len: usize) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD || tokens[1] != UNK {
            return Err(Error::invalid("vocabulary must start with [PAD], [UNK]"));
        }
        if max_len == 0 {
            return Err(Error::invalid("max_len must be positive"));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId(t.clone()));
            }
        }
        Ok(Self {
            tokens,
            index,
            max_len,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Tokenizes the record with its kind prefix, truncates to `max_len`
    /// and pads with `[PAD]`.
    pub fn encode(&self, rec: &TextRecord) -> Encoding {
        let mut input = String::with_capacity(rec.text.len() + 10);
        input.push_str(rec.kind.prefix());
        input.push_str(&rec.text);
        self.encode_str(&input)
    }

    /// Encodes raw text without any prefix.
    pub fn encode_str(&self, text: &str) -> Encoding {
        let mut ids: Vec<u32> = pretokenize(text)
            .iter()
            .take(self.max_len)
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect();
        if ids.is_empty() {
            ids.push(UNK_ID);
        }
        let real = ids.len();
        ids.resize(self.max_len, PAD_ID);
        let mut mask = vec![false; self.max_len];
        mask[..real].iter_mut().for_each(|m| *m = true);
        Encoding { ids, mask }
    }
}

fn most_frequent(counts: BTreeMap<String, u64>, vocab_size: usize, max_len: usize) -> Result<Tokenizer> {
    if vocab_size < MIN_VOCAB {
        return Err(Error::invalid(alloc::format!(
            "vocabulary size {vocab_size} below minimum {MIN_VOCAB}"
        )));
    }
    if counts.is_empty() {
        return Err(Error::Empty("vocabulary corpus"));
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    // BTreeMap order is lexicographic, and the sort is stable
    ranked.sort_by_key(|r| core::cmp::Reverse(r.1));
    let mut tokens = vec![PAD.to_string(), UNK.to_string()];
    tokens.extend(
        ranked
            .into_iter()
            .filter(|(t, _)| t != PAD && t != UNK)
            .take(vocab_size - 2)
            .map(|(t, _)| t),
    );
    Tokenizer::from_tokens(tokens, max_len)
}

/// Vocabulary of the `vocab_size - 2` most frequent lowercased tokens of
/// the record texts, ties broken lexicographically.
pub fn build_vocab<'a>(
    records: impl IntoIterator<Item = &'a TextRecord>,
    vocab_size: usize,
    max_len: usize,
) -> Result<Tokenizer> {
    let mut counts = BTreeMap::new();
    for rec in records {
        for t in pretokenize(&rec.text) {
            *counts.entry(t).or_insert(0u64) += 1;
        }
    }
    most_frequent(counts, vocab_size, max_len)
}

/// Like [`build_vocab`] but counts the prefixed model inputs, so the
/// `query: ` / `document: ` tokens are in vocabulary whenever both kinds
/// occur.
pub fn build_vocab_for_inputs<'a>(
    records: impl IntoIterator<Item = &'a TextRecord>,
    vocab_size: usize,
    max_len: usize,
) -> Result<Tokenizer> {
    let mut counts = BTreeMap::new();
    for rec in records {
        for t in pretokenize(rec.kind.prefix()).into_iter().chain(pretokenize(&rec.text)) {
            *counts.entry(t).or_insert(0u64) += 1;
        }
    }
    most_frequent(counts, vocab_size, max_len)
}
