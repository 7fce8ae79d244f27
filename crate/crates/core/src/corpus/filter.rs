use std::collections::BTreeMap;

use super::AnnotationGraph;
use crate::candidates::CandidateTable;

/// Keeps tuples whose head and tail both appear among the top `max_candidates` candidates
/// of some mention in the same document. Documents left without tuples keep an empty graph.
pub fn filter_annotations_by_candidates(
    annotations: &BTreeMap<String, AnnotationGraph>,
    candidates: &CandidateTable,
    max_candidates: usize,
) -> BTreeMap<String, AnnotationGraph> {
    annotations
        .iter()
        .map(|(doc_id, graph)| {
            let reachable = candidates.doc_entities(doc_id, max_candidates);
            let tuples = graph
                .tuples
                .iter()
                .filter(|t| reachable.contains(&t.head) && reachable.contains(&t.tail))
                .cloned()
                .collect();
            (
                doc_id.clone(),
                AnnotationGraph {
                    doc_id: doc_id.clone(),
                    tuples,
                },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::Candidate;
    use crate::corpus::Tuple;

    fn table(entities: &[&str]) -> CandidateTable {
        let mut t = CandidateTable::new();
        for (i, e) in entities.iter().enumerate() {
            t.insert(
                "d",
                i,
                vec![Candidate {
                    entity_id: e.to_string(),
                    score: 1.0,
                }],
            );
        }
        t
    }

    fn graph(tuples: &[(&str, &str)]) -> BTreeMap<String, AnnotationGraph> {
        let mut g = AnnotationGraph::new("d");
        for (h, t) in tuples {
            g.tuples.insert(Tuple::new(*h, 0, *t));
        }
        BTreeMap::from([("d".to_string(), g)])
    }

    #[test]
    fn keeps_and_drops() {
        let cands = table(&["A", "B", "C"]);
        let kept = filter_annotations_by_candidates(&graph(&[("A", "B")]), &cands, 250);
        assert_eq!(kept["d"].tuples.len(), 1);
        let dropped = filter_annotations_by_candidates(&graph(&[("A", "D")]), &cands, 250);
        assert!(dropped["d"].tuples.is_empty());
        assert!(dropped.contains_key("d"));
    }

    #[test]
    fn matches_membership_check_and_is_idempotent() {
        let cands = table(&["A", "B", "C"]);
        let input = graph(&[("A", "B"), ("C", "A"), ("B", "Z")]);
        let once = filter_annotations_by_candidates(&input, &cands, 250);
        let expected: Vec<_> = input["d"]
            .tuples
            .iter()
            .filter(|t| ["A", "B", "C"].contains(&t.head.as_str()) && ["A", "B", "C"].contains(&t.tail.as_str()))
            .cloned()
            .collect();
        assert_eq!(once["d"].tuples.iter().cloned().collect::<Vec<_>>(), expected);
        assert_eq!(once["d"].tuples.len(), 2);
        assert_eq!(filter_annotations_by_candidates(&once, &cands, 250), once);
    }
}
