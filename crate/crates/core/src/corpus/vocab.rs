use std::collections::{BTreeMap, HashMap};

use super::{tokenize, AnnotatedExample};
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Token <-> id mapping. Ids `0..4` are the special tokens; the rest are
/// ordered by descending corpus frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
    min_count: usize,
}

impl Vocabulary {
    /// Count sentence and entity tokens; keep those seen at least
    /// `min_count` times.
    pub fn build(examples: &[AnnotatedExample], min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let entity_tokens: Vec<Vec<String>> = examples.iter().map(|e| tokenize(&e.entity_surface)).collect();
        for (ex, ent) in examples.iter().zip(&entity_tokens) {
            for t in ex.tokens.iter().chain(ent) {
                *counts.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(t, c)| c >= min_count.max(1) && !SPECIALS.contains(&t)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = kept.into_iter().map(|(t, _)| t.to_string());
        Self::from_tokens(tokens, min_count)
    }

    fn from_tokens(tokens: impl Iterator<Item = String>, min_count: usize) -> Self {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { id_to_token, token_to_id, min_count }
    }

    /// Rebuild from the ordered non-special tokens (as stored in a checkpoint).
    pub fn from_ordered(tokens: Vec<String>) -> Result<Self> {
        let vocab = Self::from_tokens(tokens.into_iter(), 1);
        if vocab.token_to_id.len() != vocab.id_to_token.len() {
            return Err(Error::format("vocabulary contains duplicate tokens"));
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    /// Non-special tokens in id order.
    pub fn ordinary_tokens(&self) -> &[String] {
        &self.id_to_token[SPECIALS.len()..]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}
