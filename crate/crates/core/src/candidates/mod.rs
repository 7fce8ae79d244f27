//! Mention normalization, tf-idf n-gram features and exact cosine candidate retrieval.

mod index;
mod porter;
mod table;

use std::path::PathBuf;

pub use index::{ngram_counts, CandidateIndex, NGramVocabulary, SparseVector, CHAR_NGRAM_SIZES, WORD_NGRAM_SIZES};
pub use porter::stem;
pub use table::{candidate_recall_at_k, generate_candidates, Candidate, CandidateTable};

use crate::corpus::is_punctuation;

#[derive(Debug, thiserror::Error)]
pub enum CandidateError {
    #[error("knowledge base has no entity with a non-empty normalized name")]
    EmptyIndex,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("malformed index: {0}")]
    Format(String),
}

/// Drops punctuation, lowercases and stems every whitespace-separated word.
pub fn normalize(surface: &str) -> String {
    let cleaned: String = surface
        .chars()
        .filter(|&c| !is_punctuation(c))
        .flat_map(char::to_lowercase)
        .collect();
    cleaned
        .split_whitespace()
        .map(stem)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::normalize;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("ASPIRIN"), "aspirin");
        assert_eq!(normalize("Heart Attacks!"), "heart attack");
        assert_eq!(normalize("--"), "");
        assert_eq!(normalize("  a-b   C "), "ab c");
    }
}
