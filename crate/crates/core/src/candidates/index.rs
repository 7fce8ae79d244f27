use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize, Candidate, CandidateError};
use crate::corpus::KnowledgeBase;

pub const CHAR_NGRAM_SIZES: std::ops::RangeInclusive<usize> = 2..=5;
pub const WORD_NGRAM_SIZES: std::ops::RangeInclusive<usize> = 1..=2;

/// Raw n-gram counts of a normalized string. Character grams are keyed `c:` and word
/// grams `w:`.
pub fn ngram_counts(normalized: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    let chars: Vec<char> = normalized.chars().collect();
    for n in CHAR_NGRAM_SIZES {
        for window in chars.windows(n) {
            let gram: String = window.iter().collect();
            *counts.entry(format!("c:{gram}")).or_insert(0) += 1;
        }
    }
    let words: Vec<&str> = normalized.split_whitespace().collect();
    for n in WORD_NGRAM_SIZES {
        for window in words.windows(n) {
            *counts.entry(format!("w:{}", window.join(" "))).or_insert(0) += 1;
        }
    }
    counts
}

/// Sparse non-negative vector with strictly increasing indices and no zero entries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
    norm: f64,
}

impl SparseVector {
    pub fn new(mut entries: Vec<(usize, f64)>) -> Self {
        entries.retain(|&(_, w)| w != 0.0);
        entries.sort_by_key(|&(i, _)| i);
        entries.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        let norm = entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt();
        Self { entries, norm }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Entries divided by the norm.
    pub fn normalized(&self) -> Vec<(usize, f64)> {
        self.entries.iter().map(|&(i, w)| (i, w / self.norm)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NGramVocabulary {
    features: BTreeMap<String, usize>,
    idf: Vec<f64>,
    document_count: usize,
}

impl NGramVocabulary {
    /// Every string counts as one document. Feature indices follow lexicographic order.
    pub fn fit<'a>(normalized_names: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut document_count = 0;
        for name in normalized_names {
            document_count += 1;
            for gram in ngram_counts(name).into_keys() {
                *df.entry(gram).or_insert(0) += 1;
            }
        }
        let d = document_count as f64;
        let mut features = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (i, (gram, count)) in df.into_iter().enumerate() {
            idf.push(((1.0 + d) / (1.0 + count as f64)).ln() + 1.0);
            features.insert(gram, i);
        }
        Self {
            features,
            idf,
            document_count,
        }
    }

    pub fn index_of(&self, feature: &str) -> Option<usize> {
        self.features.get(feature).copied()
    }

    pub fn idf(&self, index: usize) -> f64 {
        self.idf[index]
    }

    pub fn len(&self) -> usize {
        self.idf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idf.is_empty()
    }

    pub fn document_count(&self) -> usize {
        self.document_count
    }

    /// tf-idf vector of an already normalized string; unseen features are dropped.
    pub fn featurize(&self, normalized: &str) -> SparseVector {
        SparseVector::new(
            ngram_counts(normalized)
                .into_iter()
                .filter_map(|(gram, tf)| {
                    self.index_of(&gram).map(|i| (i, tf as f64 * self.idf[i]))
                })
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct IndexedName {
    entity: usize,
    text: String,
    vector: SparseVector,
}

/// Exact cosine retrieval over every canonical name and synonym of a knowledge base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateIndex {
    vocab: NGramVocabulary,
    entity_ids: Vec<String>,
    names: Vec<IndexedName>,
    /// feature → (name, weight / norm), ordered by name and hence by entity id.
    #[serde(skip)]
    postings: Vec<Vec<(usize, f64)>>,
}

impl CandidateIndex {
    pub fn build(kb: &KnowledgeBase) -> Result<Self, CandidateError> {
        let mut entity_ids = Vec::new();
        let mut raw_names: Vec<(usize, String)> = Vec::new();
        for entity in kb.entities() {
            let mut normalized: Vec<String> = entity
                .names()
                .map(normalize)
                .filter(|n| !n.is_empty())
                .collect();
            normalized.sort();
            normalized.dedup();
            if normalized.is_empty() {
                log::warn!("entity {} has no non-empty normalized name; not indexed", entity.entity_id);
                continue;
            }
            let e = entity_ids.len();
            entity_ids.push(entity.entity_id.clone());
            raw_names.extend(normalized.into_iter().map(|n| (e, n)));
        }
        if raw_names.is_empty() {
            return Err(CandidateError::EmptyIndex);
        }
        let vocab = NGramVocabulary::fit(raw_names.iter().map(|(_, n)| n.as_str()));
        let names = raw_names
            .into_iter()
            .map(|(entity, text)| IndexedName {
                entity,
                vector: vocab.featurize(&text),
                text,
            })
            .collect();
        let mut index = Self {
            vocab,
            entity_ids,
            names,
            postings: Vec::new(),
        };
        index.rebuild_postings();
        Ok(index)
    }

    fn rebuild_postings(&mut self) {
        let mut postings = vec![Vec::new(); self.vocab.len()];
        for (n, name) in self.names.iter().enumerate() {
            for (feature, w) in name.vector.normalized() {
                postings[feature].push((n, w));
            }
        }
        self.postings = postings;
    }

    pub fn vocab(&self) -> &NGramVocabulary {
        &self.vocab
    }

    /// Indexed entity ids in ascending order.
    pub fn entity_ids(&self) -> &[String] {
        &self.entity_ids
    }

    /// `(entity_id, normalized name, tf-idf vector)` for every indexed name.
    pub fn names(&self) -> impl Iterator<Item = (&str, &str, &SparseVector)> {
        self.names
            .iter()
            .map(|n| (self.entity_ids[n.entity].as_str(), n.text.as_str(), &n.vector))
    }

    pub fn num_names(&self) -> usize {
        self.names.len()
    }

    /// The `c` entities with highest cosine similarity to `surface`; an entity scores its
    /// best name. Ties go to the lexicographically smaller id.
    pub fn query_top_c(&self, surface: &str, c: usize) -> Result<Vec<Candidate>, CandidateError> {
        if c == 0 {
            return Err(CandidateError::InvalidArgument("c must be at least 1".into()));
        }
        let query = self.vocab.featurize(&normalize(surface));
        if query.is_empty() {
            return Ok(Vec::new());
        }
        let mut acc = vec![0.0; self.names.len()];
        let mut seen = vec![false; self.names.len()];
        let mut touched = Vec::new();
        for (feature, qw) in query.normalized() {
            for &(n, w) in &self.postings[feature] {
                if !seen[n] {
                    seen[n] = true;
                    touched.push(n);
                }
                acc[n] += qw * w;
            }
        }
        let mut best: BTreeMap<usize, f64> = BTreeMap::new();
        for n in touched {
            let e = self.names[n].entity;
            let s = acc[n].clamp(0.0, 1.0);
            best.entry(e).and_modify(|b| *b = b.max(s)).or_insert(s);
        }
        let mut ranked: Vec<(usize, f64)> = best.into_iter().collect();
        // Entity indices follow id order, so sorting by index breaks ties lexicographically.
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(c);
        Ok(ranked
            .into_iter()
            .map(|(e, score)| Candidate {
                entity_id: self.entity_ids[e].clone(),
                score,
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), CandidateError> {
        let json = serde_json::to_string(self).map_err(|e| CandidateError::Format(e.to_string()))?;
        std::fs::write(path, json).map_err(|source| CandidateError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CandidateError> {
        let text = std::fs::read_to_string(path).map_err(|source| CandidateError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut index: Self =
            serde_json::from_str(&text).map_err(|e| CandidateError::Format(format!("{}: {e}", path.display())))?;
        index.rebuild_postings();
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Entity, KnowledgeBase};

    pub(crate) fn kb_of(names: &[(&str, &[&str])]) -> KnowledgeBase {
        let mut kb = KnowledgeBase::new(vec!["t".into()], vec!["r".into()]).unwrap();
        for (id, names) in names {
            kb.add_entity(Entity {
                entity_id: id.to_string(),
                canonical_name: names[0].to_string(),
                synonyms: names[1..].iter().map(|s| s.to_string()).collect(),
                type_id: 0,
            })
            .unwrap();
        }
        kb
    }

    #[test]
    fn featurize_two_letter_word() {
        let vocab = NGramVocabulary::fit(["ab"]);
        let v = vocab.featurize("ab");
        assert_eq!(v.len(), 2);
        assert!(vocab.featurize("").is_empty());
        assert_eq!(vocab.featurize("").norm(), 0.0);
        assert_eq!(vocab.featurize("ab"), v);
    }

    #[test]
    fn ngram_enumeration() {
        let counts = ngram_counts("ab cd");
        // char 2..5 grams over 5 chars: 4 + 3 + 2 + 1; word grams: 2 + 1.
        assert_eq!(counts.values().sum::<usize>(), 13);
        assert!(counts.contains_key("c:b c"));
        assert!(counts.contains_key("w:ab cd"));
    }

    #[test]
    fn document_count_and_idf() {
        let index = CandidateIndex::build(&kb_of(&[("A", &["abx"]), ("B", &["aby"])])).unwrap();
        assert_eq!(index.vocab().document_count(), 2);
        let shared = index.vocab().idf(index.vocab().index_of("c:ab").unwrap());
        let unique = index.vocab().idf(index.vocab().index_of("c:bx").unwrap());
        // ln(3/3) + 1 versus ln(3/2) + 1
        assert_eq!(shared, 1.0);
        assert!((unique - (1.5f64.ln() + 1.0)).abs() < 1e-15);
        assert!(shared < unique);
    }

    #[test]
    fn empty_names_are_excluded() {
        let index = CandidateIndex::build(&kb_of(&[("A", &["--"]), ("B", &["aspirin"])])).unwrap();
        assert_eq!(index.entity_ids(), ["B"]);
        assert!(matches!(
            CandidateIndex::build(&kb_of(&[("A", &["!!"])])),
            Err(CandidateError::EmptyIndex)
        ));
    }

    #[test]
    fn exact_name_scores_one() {
        let index = CandidateIndex::build(&kb_of(&[
            ("A", &["aspirin", "acetylsalicylic acid"]),
            ("B", &["asthma"]),
            ("C", &["heart attack"]),
        ]))
        .unwrap();
        let top = index.query_top_c("Heart Attacks!", 3).unwrap();
        assert_eq!(top[0].entity_id, "C");
        assert!((top[0].score - 1.0).abs() < 1e-12);
        let all = index.query_top_c("as", 10).unwrap();
        assert!(all.len() <= 3);
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(index.query_top_c("--", 5).unwrap().is_empty());
        assert!(index.query_top_c("x", 0).is_err());
    }

    #[test]
    fn best_synonym_wins_and_no_duplicates() {
        let index =
            CandidateIndex::build(&kb_of(&[("A", &["foo bar", "foo"]), ("B", &["foo baz"])])).unwrap();
        let top = index.query_top_c("foo", 5).unwrap();
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].entity_id, "A");
        assert!((top[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_entity_id() {
        let index = CandidateIndex::build(&kb_of(&[("Z", &["same"]), ("M", &["same"])])).unwrap();
        let top = index.query_top_c("same", 2).unwrap();
        assert_eq!(top[0].entity_id, "M");
        assert_eq!(top[1].entity_id, "Z");
        assert_eq!(top[0].score, top[1].score);
    }

    #[test]
    fn serialization_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        let index = CandidateIndex::build(&kb_of(&[("A", &["aspirin"]), ("B", &["asthma"])])).unwrap();
        index.save(&path).unwrap();
        let loaded = CandidateIndex::load(&path).unwrap();
        assert_eq!(loaded, index);
        assert_eq!(loaded.query_top_c("asp", 2).unwrap(), index.query_top_c("asp", 2).unwrap());
    }
}
