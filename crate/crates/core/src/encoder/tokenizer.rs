//! Deterministic hashing tokenizer.
//!
//! Text is lowercased and split into words at whitespace; every punctuation
//! character becomes a token of its own. A word maps to
//! `4 + fnv1a64(word) mod (vocab_size - 4)`, leaving ids 0..4 for PAD, CLS,
//! SEP and one spare.

use crate::error::{Error, Result};
use crate::hash::fnv1a64;

use super::config::{EncoderConfig, FIRST_WORD_ID};

/// Token ids plus a 1-prefix / 0-suffix attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
    attention_mask: Vec<u8>,
}

impl TokenSequence {
    /// Validates mask shape: same length as `ids`, at least one leading 1,
    /// and no 1 after the first 0.
    pub fn new(ids: Vec<u32>, attention_mask: Vec<u8>) -> Result<Self> {
        if ids.len() != attention_mask.len() {
            return Err(Error::dims("TokenSequence", ids.len(), attention_mask.len()));
        }
        if attention_mask.first() != Some(&1) {
            return Err(Error::invalid("attention mask must start with 1"));
        }
        let valid = attention_mask.iter().take_while(|m| **m == 1).count();
        if attention_mask[valid..].iter().any(|m| *m != 0) {
            return Err(Error::invalid("attention mask must be a 1-prefix followed by 0s"));
        }
        Ok(Self { ids, attention_mask })
    }

    /// A sequence with no padding.
    pub fn unpadded(ids: Vec<u32>) -> Result<Self> {
        let mask = vec![1; ids.len()];
        Self::new(ids, mask)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn attention_mask(&self) -> &[u8] {
        &self.attention_mask
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn valid_len(&self) -> usize {
        self.attention_mask.iter().take_while(|m| **m == 1).count()
    }

    /// Copy padded (or truncated at padding) to `len` positions.
    pub fn padded_to(&self, len: usize, pad_id: u32) -> Result<Self> {
        if len < self.valid_len() {
            return Err(Error::invalid(format!(
                "cannot pad a sequence of {} tokens to {len}",
                self.valid_len()
            )));
        }
        let mut ids = self.ids.clone();
        let mut mask = self.attention_mask.clone();
        ids.resize(len, pad_id);
        mask.resize(len, 0);
        Self::new(ids, mask)
    }

    pub(crate) fn check_against(&self, config: &EncoderConfig) -> Result<()> {
        if self.len() > config.max_seq_len {
            return Err(Error::invalid(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                self.len(),
                config.max_seq_len
            )));
        }
        if self.ids[0] != config.cls_id {
            return Err(Error::invalid(format!(
                "sequence must start with CLS ({}), found {}",
                config.cls_id, self.ids[0]
            )));
        }
        if let Some(id) = self.ids.iter().find(|id| **id as usize >= config.vocab_size) {
            return Err(Error::invalid(format!("token id {id} outside vocabulary")));
        }
        Ok(())
    }
}

/// Splits lowercased text into word and punctuation tokens.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() && !ch.is_control() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn word_id(word: &str, vocab_size: usize) -> u32 {
    let span = (vocab_size as u64) - FIRST_WORD_ID as u64;
    FIRST_WORD_ID + (fnv1a64(word.as_bytes()) % span) as u32
}

/// `[CLS] words… [SEP]`, truncated to `max_len` and padded with PAD up to
/// `max_len`.
pub fn tokenize(config: &EncoderConfig, text: &str, max_len: usize) -> Result<TokenSequence> {
    if max_len > config.max_seq_len {
        return Err(Error::invalid(format!(
            "max_len {max_len} exceeds the model's max_seq_len {}",
            config.max_seq_len
        )));
    }
    if max_len < 2 {
        return Err(Error::invalid("max_len must be at least 2"));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(config.cls_id);
    ids.extend(
        words(text)
            .iter()
            .take(max_len - 2)
            .map(|w| word_id(w, config.vocab_size)),
    );
    ids.push(config.sep_id);
    let valid = ids.len();
    ids.resize(max_len, config.pad_id);
    let mut mask = vec![1u8; valid];
    mask.resize(max_len, 0);
    TokenSequence::new(ids, mask)
}
