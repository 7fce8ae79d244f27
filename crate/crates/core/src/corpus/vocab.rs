use std::collections::{BTreeMap, HashMap};

use super::Document;

pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_MIN_COUNT: usize = 2;

/// Token → dense index map. Index 0 is the unknown-word token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

impl Vocabulary {
    pub const UNK: usize = 0;

    /// Tokens seen at least `min_count` times get an index, assigned in lexicographic order.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>, min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            for t in &doc.tokens {
                *counts.entry(t.surface.as_str()).or_default() += 1;
            }
        }
        let kept = counts
            .into_iter()
            .filter(|&(tok, c)| c >= min_count && tok != UNK_TOKEN)
            .map(|(tok, _)| tok.to_string());
        Self::from_tokens(std::iter::once(UNK_TOKEN.to_string()).chain(kept).collect(), min_count)
    }

    /// Rebuilds a vocabulary from its token list (index order, UNK first).
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            index,
            min_count,
        }
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn encode(&self, doc: &Document) -> Vec<usize> {
        doc.tokens.iter().map(|t| self.index_of(&t.surface)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }
}
