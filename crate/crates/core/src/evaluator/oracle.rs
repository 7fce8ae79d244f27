use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::candidates::CandidateTable;
use crate::corpus::{AnnotationGraph, LinkTable};

/// How an entity becomes reachable in a document.
#[derive(Clone, Copy, Debug)]
pub enum LinkPolicy<'a> {
    /// Rank-1 candidate of some mention.
    TopOne(&'a CandidateTable),
    /// Anywhere in some mention's top `c` candidates.
    OracleTopC(&'a CandidateTable, usize),
    /// Linked by a fixed link file.
    External(&'a LinkTable),
}

impl LinkPolicy<'_> {
    pub fn name(&self) -> String {
        match self {
            Self::TopOne(_) => "top-1".into(),
            Self::OracleTopC(_, c) if *c == usize::MAX => "oracle-all".into(),
            Self::OracleTopC(_, c) => format!("oracle-top-{c}"),
            Self::External(_) => "external".into(),
        }
    }

    pub fn reachable(&self, doc_id: &str) -> BTreeSet<String> {
        match self {
            Self::TopOne(table) => table.doc_entities(doc_id, 1),
            Self::OracleTopC(table, c) => table.doc_entities(doc_id, *c),
            Self::External(links) => links
                .get(doc_id)
                .map(|m| m.values().cloned().collect())
                .unwrap_or_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleEntry {
    pub policy: String,
    pub reachable: usize,
    pub total: usize,
    pub recall: f64,
}

/// Fraction of gold tuples whose head and tail are both reachable in their document, i.e.
/// the recall of a perfect relation extractor behind `policy`.
pub fn oracle_recall(policy: &LinkPolicy, gold: &BTreeMap<String, AnnotationGraph>) -> OracleEntry {
    let mut reachable = 0;
    let mut total = 0;
    for (doc, graph) in gold {
        let entities = policy.reachable(doc);
        total += graph.tuples.len();
        reachable += graph
            .tuples
            .iter()
            .filter(|t| entities.contains(&t.head) && entities.contains(&t.tail))
            .count();
    }
    OracleEntry {
        policy: policy.name(),
        reachable,
        total,
        recall: if total == 0 { 0.0 } else { reachable as f64 / total as f64 },
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OracleReport {
    pub entries: Vec<OracleEntry>,
}

impl OracleReport {
    pub fn table(&self) -> String {
        let width = self.entries.iter().map(|e| e.policy.len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:<width$}  {:>9}  {:>6}  {:>6}\n", "policy", "reachable", "total", "recall");
        for e in &self.entries {
            let _ = writeln!(out, "{:<width$}  {:>9}  {:>6}  {:>6.3}", e.policy, e.reachable, e.total, e.recall);
        }
        out
    }

    /// `{policy: {reachable, total, recall}}`.
    pub fn json(&self) -> serde_json::Value {
        let map = self
            .entries
            .iter()
            .map(|e| {
                (
                    e.policy.clone(),
                    serde_json::json!({ "reachable": e.reachable, "total": e.total, "recall": e.recall }),
                )
            })
            .collect();
        serde_json::Value::Object(map)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::candidates::Candidate;
    use crate::corpus::{filter_annotations_by_candidates, Tuple};

    fn table(rows: &[(&str, usize, &[&str])]) -> CandidateTable {
        let mut t = CandidateTable::new();
        for &(doc, m, ids) in rows {
            let cands = ids
                .iter()
                .map(|id| Candidate {
                    entity_id: id.to_string(),
                    score: 1.0,
                })
                .collect();
            t.insert(doc, m, cands);
        }
        t
    }

    #[test]
    fn three_tuple_fixture() {
        let cands = table(&[("d", 0, &["A", "X"]), ("d", 1, &["Y", "B"]), ("d", 2, &["C"])]);
        let mut g = AnnotationGraph::new("d");
        g.tuples.insert(Tuple::new("A", 0, "C"));
        g.tuples.insert(Tuple::new("A", 0, "B"));
        g.tuples.insert(Tuple::new("B", 1, "Z"));
        let gold = BTreeMap::from([("d".to_string(), g)]);
        // top-1 reaches {A, Y, C}; top-2 reaches {A, X, Y, B, C}.
        let top1 = oracle_recall(&LinkPolicy::TopOne(&cands), &gold);
        assert_eq!((top1.reachable, top1.total), (1, 3));
        let top2 = oracle_recall(&LinkPolicy::OracleTopC(&cands, 2), &gold);
        assert_eq!(top2.reachable, 2);
        let links = LinkTable::from([("d".to_string(), BTreeMap::from([(0, "A".to_string()), (1, "Z".to_string())]))]);
        assert_eq!(oracle_recall(&LinkPolicy::External(&links), &gold).reachable, 0);
    }

    #[test]
    fn unlimited_c_on_filtered_annotations_is_one() {
        let cands = table(&[("d", 0, &["A", "B"]), ("d", 1, &["C"])]);
        let mut g = AnnotationGraph::new("d");
        g.tuples.insert(Tuple::new("A", 0, "C"));
        g.tuples.insert(Tuple::new("A", 0, "Q"));
        let filtered = filter_annotations_by_candidates(&BTreeMap::from([("d".to_string(), g)]), &cands, usize::MAX);
        let entry = oracle_recall(&LinkPolicy::OracleTopC(&cands, usize::MAX), &filtered);
        assert_eq!(entry.recall, 1.0);
        assert_eq!(entry.policy, "oracle-all");
    }

    #[test]
    fn top_one_never_exceeds_top_c() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let mut cands = CandidateTable::new();
            let mut gold = BTreeMap::new();
            for d in 0..3 {
                let doc = format!("d{d}");
                for m in 0..rng.random_range(0..5) {
                    let n = rng.random_range(1..5);
                    let list = (0..n)
                        .map(|_| Candidate {
                            entity_id: format!("E{}", rng.random_range(0..8)),
                            score: 1.0,
                        })
                        .collect();
                    cands.insert(&doc, m, list);
                }
                let mut g = AnnotationGraph::new(&doc);
                for _ in 0..rng.random_range(0..4) {
                    g.tuples.insert(Tuple::new(
                        format!("E{}", rng.random_range(0..8)),
                        0,
                        format!("E{}", rng.random_range(0..8)),
                    ));
                }
                gold.insert(doc, g);
            }
            let top1 = oracle_recall(&LinkPolicy::TopOne(&cands), &gold).recall;
            for c in 1..5 {
                assert!(top1 <= oracle_recall(&LinkPolicy::OracleTopC(&cands, c), &gold).recall);
            }
        }
    }

    #[test]
    fn report_renders() {
        let report = OracleReport {
            entries: vec![OracleEntry {
                policy: "top-1".into(),
                reachable: 2,
                total: 3,
                recall: 2.0 / 3.0,
            }],
        };
        assert!(report.table().contains("0.667"));
        assert_eq!(report.json()["top-1"]["total"], 3);
    }
}
