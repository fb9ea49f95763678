//! Tokenizer and frequency vocabulary.
//!
//! Subword modeling is deliberately out: tokens are lowercased maximal runs
//! of alphanumeric characters, and every other non-whitespace character
//! becomes its own single-character token. Unknown tokens map to `[UNK]`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

const RESERVED: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN];

/// CJK ideographs get no whitespace, so they are split per character.
fn is_cjk(ch: char) -> bool {
    matches!(
        ch as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF
    )
}

/// Lowercase, split on Unicode whitespace, break punctuation out into
/// single-character tokens, and character-split CJK runs.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(core::mem::take(&mut current));
            }
        } else if is_cjk(ch) || !ch.is_alphanumeric() {
            if !current.is_empty() {
                tokens.push(core::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token to id map with fixed reserved ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Build from corpus token streams. Ids 4.. are assigned by descending
    /// frequency, ties broken lexicographically.
    pub fn build<'a, I>(corpus: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size < RESERVED.len() + 1 {
            return Err(Error::Config(alloc::format!(
                "vocab max_size {max_size} too small: the {} reserved tokens must fit",
                RESERVED.len()
            )));
        }
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for token in corpus {
            *counts.entry(token).or_insert(0) += 1;
        }
        if counts.is_empty() {
            return Err(Error::Contract("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        // BTreeMap iteration is already lexicographic, so a stable sort by
        // descending count preserves the tie order.
        ranked.sort_by_key(|&(_, count)| core::cmp::Reverse(count));

        let mut vocab = Vocab::reserved_only();
        for (token, _) in ranked.into_iter().take(max_size - RESERVED.len()) {
            let id = vocab.id_to_token.len() as u32;
            vocab.token_to_id.insert(token.to_string(), id);
            vocab.id_to_token.push(token.to_string());
        }
        Ok(vocab)
    }

    /// Rebuild from an explicit (token, id) listing, e.g. out of a
    /// checkpoint. Reserved ids must be absent from the listing.
    pub fn from_entries(entries: &[(String, u32)]) -> Result<Self> {
        let mut vocab = Vocab::reserved_only();
        let mut sorted: Vec<&(String, u32)> = entries.iter().collect();
        sorted.sort_by_key(|(_, id)| *id);
        for (token, id) in sorted {
            let expected = vocab.id_to_token.len() as u32;
            if *id != expected {
                return Err(Error::Checkpoint(alloc::format!(
                    "vocabulary ids not contiguous: token {token:?} has id {id}, expected {expected}"
                )));
            }
            vocab.token_to_id.insert(token.clone(), *id);
            vocab.id_to_token.push(token.clone());
        }
        Ok(vocab)
    }

    fn reserved_only() -> Self {
        let mut token_to_id = BTreeMap::new();
        let mut id_to_token = Vec::new();
        for (id, token) in RESERVED.iter().enumerate() {
            token_to_id.insert(token.to_string(), id as u32);
            id_to_token.push(token.to_string());
        }
        Vocab {
            token_to_id,
            id_to_token,
        }
    }

    /// Id for a token, falling back to `[UNK]`.
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        self.id_to_token
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(UNK_TOKEN)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    /// Non-reserved entries in id order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, u32)> {
        self.id_to_token
            .iter()
            .enumerate()
            .skip(RESERVED.len())
            .map(|(id, token)| (token.as_str(), id as u32))
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}
