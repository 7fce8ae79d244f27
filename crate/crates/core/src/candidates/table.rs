use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::{CandidateError, CandidateIndex};
use crate::corpus::{Corpus, LinkTable};

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub entity_id: String,
    pub score: f64,
}

/// Ranked candidates per `(doc_id, mention_index)`. Mentions without an entry have no
/// candidates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateTable {
    docs: BTreeMap<String, BTreeMap<usize, Vec<Candidate>>>,
}

impl CandidateTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc_id: &str, mention_index: usize, candidates: Vec<Candidate>) {
        self.docs
            .entry(doc_id.to_string())
            .or_default()
            .insert(mention_index, candidates);
    }

    pub fn get(&self, doc_id: &str, mention_index: usize) -> &[Candidate] {
        self.docs
            .get(doc_id)
            .and_then(|d| d.get(&mention_index))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn doc(&self, doc_id: &str) -> impl Iterator<Item = (usize, &[Candidate])> {
        self.docs
            .get(doc_id)
            .into_iter()
            .flatten()
            .map(|(&i, c)| (i, c.as_slice()))
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }

    /// Union of the top `max_candidates` candidates over a document's mentions.
    pub fn doc_entities(&self, doc_id: &str, max_candidates: usize) -> BTreeSet<String> {
        self.doc(doc_id)
            .flat_map(|(_, c)| c.iter().take(max_candidates).map(|c| c.entity_id.clone()))
            .collect()
    }

    /// Keeps at most `c` candidates per mention.
    pub fn truncated(&self, c: usize) -> Self {
        let mut out = self.clone();
        for per_doc in out.docs.values_mut() {
            for list in per_doc.values_mut() {
                list.truncate(c);
            }
        }
        out
    }

    /// Reads `doc_id, mention_index, rank, entity_id, score` lines. Ranks are 1-based and
    /// must be contiguous within a mention.
    pub fn load(path: &Path) -> Result<Self, CandidateError> {
        let text = std::fs::read_to_string(path).map_err(|source| CandidateError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let err = |line: usize, detail: String| CandidateError::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut table = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(err(line_no, format!("expected 5 fields, found {}", f.len())));
            }
            let mention: usize = f[1].parse().map_err(|_| err(line_no, format!("bad mention index {:?}", f[1])))?;
            let rank: usize = f[2].parse().map_err(|_| err(line_no, format!("bad rank {:?}", f[2])))?;
            let score: f64 = f[4].parse().map_err(|_| err(line_no, format!("bad score {:?}", f[4])))?;
            if !(0.0..=1.0).contains(&score) {
                return Err(err(line_no, format!("score {score} outside [0, 1]")));
            }
            let list = table.docs.entry(f[0].to_string()).or_default().entry(mention).or_default();
            if rank != list.len() + 1 {
                return Err(err(line_no, format!("rank {rank} out of order")));
            }
            list.push(Candidate {
                entity_id: f[3].to_string(),
                score,
            });
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<(), CandidateError> {
        let mut out = String::new();
        for (doc, per_doc) in &self.docs {
            for (mention, list) in per_doc {
                for (rank, c) in list.iter().enumerate() {
                    let _ = writeln!(out, "{doc}\t{mention}\t{}\t{}\t{}", rank + 1, c.entity_id, c.score);
                }
            }
        }
        std::fs::write(path, out).map_err(|source| CandidateError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Queries the index once per mention of every document.
pub fn generate_candidates(
    index: &CandidateIndex,
    corpus: &Corpus,
    c: usize,
) -> Result<CandidateTable, CandidateError> {
    let mut table = CandidateTable::new();
    for doc in &corpus.documents {
        for (i, mention) in corpus.mentions_of(&doc.doc_id).iter().enumerate() {
            let found = index.query_top_c(&mention.surface, c)?;
            if !found.is_empty() {
                table.insert(&doc.doc_id, i, found);
            }
        }
    }
    Ok(table)
}

/// Fraction of gold-linked mentions whose entity is among their top `k` candidates.
/// Returns 0 when there are no gold links.
pub fn candidate_recall_at_k(
    table: &CandidateTable,
    gold: &LinkTable,
    k: usize,
) -> Result<f64, CandidateError> {
    if k == 0 {
        return Err(CandidateError::InvalidArgument("k must be at least 1".into()));
    }
    let mut total = 0usize;
    let mut hits = 0usize;
    for (doc, links) in gold {
        for (&mention, entity) in links {
            total += 1;
            if table.get(doc, mention).iter().take(k).any(|c| &c.entity_id == entity) {
                hits += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: &str, score: f64) -> Candidate {
        Candidate {
            entity_id: id.into(),
            score,
        }
    }

    fn fixture() -> (CandidateTable, LinkTable) {
        let mut table = CandidateTable::new();
        table.insert("d1", 0, vec![cand("A", 0.9), cand("B", 0.5), cand("C", 0.1)]);
        table.insert("d1", 1, vec![cand("B", 0.8), cand("D", 0.7), cand("A", 0.2)]);
        table.insert("d2", 0, vec![cand("X", 1.0), cand("Y", 0.3)]);
        table.insert("d2", 2, vec![cand("E", 0.6)]);
        let mut gold = LinkTable::new();
        gold.entry("d1".into()).or_default().insert(0, "A".into());
        gold.entry("d1".into()).or_default().insert(1, "A".into());
        gold.entry("d2".into()).or_default().insert(0, "Y".into());
        gold.entry("d2".into()).or_default().insert(1, "Q".into());
        gold.entry("d2".into()).or_default().insert(2, "E".into());
        (table, gold)
    }

    #[test]
    fn recall_hand_counts() {
        let (table, gold) = fixture();
        // rank of gold entity: d1/0 → 1, d1/1 → 3, d2/0 → 2, d2/1 → none, d2/2 → 1
        assert_eq!(candidate_recall_at_k(&table, &gold, 1).unwrap(), 2.0 / 5.0);
        assert_eq!(candidate_recall_at_k(&table, &gold, 2).unwrap(), 3.0 / 5.0);
        assert_eq!(candidate_recall_at_k(&table, &gold, 3).unwrap(), 4.0 / 5.0);
        assert!(candidate_recall_at_k(&table, &gold, 0).is_err());
    }

    #[test]
    fn recall_is_monotone_in_k() {
        let (table, gold) = fixture();
        let values: Vec<f64> = (1..6).map(|k| candidate_recall_at_k(&table, &gold, k).unwrap()).collect();
        assert!(values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn file_round_trip() {
        let (table, _) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        table.save(&path).unwrap();
        assert_eq!(CandidateTable::load(&path).unwrap(), table);
        assert_eq!(table.doc_entities("d1", 1).len(), 2);
        assert_eq!(table.truncated(1).get("d1", 0).len(), 1);
    }
}
