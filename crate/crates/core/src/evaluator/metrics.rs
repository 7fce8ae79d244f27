use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationGraph, Tuple};
use crate::scorer::ScoredTuple;
use crate::{Error, Result};

/// Deduplicated predicted tuples per document.
pub type PredictedTuples = BTreeMap<String, BTreeSet<Tuple>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }

    /// Counts for one document's predicted and gold sets.
    pub fn from_sets<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> Self {
        let tp = predicted.intersection(gold).count();
        Self::from_counts(tp, predicted.len() - tp, gold.len() - tp)
    }

    /// Pools the counts of several reports.
    pub fn pooled<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Self {
        let (tp, fp, fn_) = reports.into_iter().fold((0, 0, 0), |acc, r| {
            (acc.0 + r.true_positives, acc.1 + r.false_positives, acc.2 + r.false_negatives)
        });
        Self::from_counts(tp, fp, fn_)
    }
}

/// Aligned text table with one row per named report.
pub fn render_table(rows: &[(&str, &MetricReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>9}  {:>6}  {:>6}\n",
        "system", "tp", "fp", "fn", "precision", "recall", "f1"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>9.3}  {:>6.3}  {:>6.3}",
            name, r.true_positives, r.false_positives, r.false_negatives, r.precision, r.recall, r.f1
        );
    }
    out
}

/// JSON object keyed by report name, then metric name.
pub fn render_json(rows: &[(&str, &MetricReport)]) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = rows
        .iter()
        .map(|(name, r)| (name.to_string(), serde_json::to_value(r).expect("report serializes")))
        .collect();
    serde_json::Value::Object(map)
}

fn check_docs<A, B>(predicted: &BTreeMap<String, A>, gold: &BTreeMap<String, B>) -> Result<()> {
    if let Some(d) = predicted.keys().find(|d| !gold.contains_key(*d)) {
        return Err(Error::Input(format!("predictions for document {d} which has no gold graph")));
    }
    if let Some(d) = gold.keys().find(|d| !predicted.contains_key(*d)) {
        return Err(Error::Input(format!("no predictions for gold document {d}")));
    }
    Ok(())
}

/// Per-document reports, in document order. Both maps must cover the same documents.
pub fn per_document(predicted: &PredictedTuples, gold: &BTreeMap<String, AnnotationGraph>) -> Result<Vec<(String, MetricReport)>> {
    check_docs(predicted, gold)?;
    Ok(gold
        .iter()
        .map(|(d, g)| (d.clone(), MetricReport::from_sets(&predicted[d], &g.tuples)))
        .collect())
}

/// Micro-averaged precision, recall and F1: counts are pooled over documents first.
pub fn micro_prf(predicted: &PredictedTuples, gold: &BTreeMap<String, AnnotationGraph>) -> Result<MetricReport> {
    let docs = per_document(predicted, gold)?;
    Ok(MetricReport::pooled(docs.iter().map(|(_, r)| r)))
}

/// Per-document F1, for external significance testing.
pub fn per_document_f1(predicted: &PredictedTuples, gold: &BTreeMap<String, AnnotationGraph>) -> Result<Vec<(String, f64)>> {
    Ok(per_document(predicted, gold)?.into_iter().map(|(d, r)| (d, r.f1)).collect())
}

/// Micro P/R/F1 over document-level entity sets. Documents missing on either side count as
/// empty sets.
pub fn linking_doc_eval(
    predicted: &BTreeMap<String, BTreeSet<String>>,
    gold: &BTreeMap<String, BTreeSet<String>>,
) -> MetricReport {
    let empty = BTreeSet::new();
    let docs: BTreeSet<&String> = predicted.keys().chain(gold.keys()).collect();
    let reports: Vec<MetricReport> = docs
        .into_iter()
        .map(|d| MetricReport::from_sets(predicted.get(d).unwrap_or(&empty), gold.get(d).unwrap_or(&empty)))
        .collect();
    MetricReport::pooled(&reports)
}

/// Tuples at or above `threshold`, as sets.
pub fn threshold_predictions(scored: &BTreeMap<String, Vec<ScoredTuple>>, threshold: f64) -> PredictedTuples {
    scored
        .iter()
        .map(|(d, s)| {
            let kept = s
                .iter()
                .filter(|t| t.probability >= threshold)
                .map(|t| t.tuple.clone())
                .collect();
            (d.clone(), kept)
        })
        .collect()
}

/// Thresholds 0.05, 0.10, ..., 0.95.
pub fn threshold_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

/// Grid threshold with the best micro-F1; ties keep the lowest threshold.
pub fn tune_threshold(
    scored: &BTreeMap<String, Vec<ScoredTuple>>,
    gold: &BTreeMap<String, AnnotationGraph>,
) -> Result<(f64, MetricReport)> {
    let mut best: Option<(f64, MetricReport)> = None;
    for t in threshold_grid() {
        let report = micro_prf(&threshold_predictions(scored, t), gold)?;
        if best.as_ref().is_none_or(|(_, b)| report.f1 > b.f1) {
            best = Some((t, report));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(doc: &str, tuples: &[(&str, usize, &str)]) -> AnnotationGraph {
        let mut g = AnnotationGraph::new(doc);
        g.tuples.extend(tuples.iter().map(|&(h, r, t)| Tuple::new(h, r, t)));
        g
    }

    fn predicted(doc: &str, tuples: &[(&str, usize, &str)]) -> PredictedTuples {
        BTreeMap::from([(doc.to_string(), graph(doc, tuples).tuples)])
    }

    fn gold(doc: &str, tuples: &[(&str, usize, &str)]) -> BTreeMap<String, AnnotationGraph> {
        BTreeMap::from([(doc.to_string(), graph(doc, tuples))])
    }

    #[test]
    fn perfect_and_empty() {
        let g = [("A", 0, "B"), ("C", 1, "D")];
        let r = micro_prf(&predicted("d", &g), &gold("d", &g)).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = micro_prf(&predicted("d", &[]), &gold("d", &g)).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_derived_example() {
        let g = [("a", 0, "x"), ("b", 0, "x"), ("c", 0, "x"), ("d", 0, "x")];
        let p = [("a", 0, "x"), ("b", 0, "x"), ("e", 0, "x")];
        let r = micro_prf(&predicted("d", &p), &gold("d", &g)).unwrap();
        assert_eq!(r.precision, 2.0 / 3.0);
        assert_eq!(r.recall, 0.5);
        assert!((r.f1 - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn tuple_components_must_all_match() {
        let r = micro_prf(&predicted("d", &[("A", 1, "B")]), &gold("d", &[("A", 0, "B")])).unwrap();
        assert_eq!(r.true_positives, 0);
        let r = micro_prf(&predicted("d", &[("B", 0, "A")]), &gold("d", &[("A", 0, "B")])).unwrap();
        assert_eq!(r.true_positives, 0);
    }

    #[test]
    fn doc_mismatch_is_an_error() {
        assert!(micro_prf(&predicted("x", &[]), &gold("d", &[])).is_err());
        let mut p = predicted("d", &[]);
        p.insert("extra".into(), BTreeSet::new());
        assert!(micro_prf(&p, &gold("d", &[])).is_err());
    }

    #[test]
    fn micro_differs_from_macro() {
        // Doc 1: 1 gold, 1 correct. Doc 2: 3 gold, none predicted.
        let mut p = predicted("d1", &[("A", 0, "B")]);
        p.insert("d2".into(), BTreeSet::new());
        let mut g = gold("d1", &[("A", 0, "B")]);
        g.insert("d2".into(), graph("d2", &[("A", 0, "C"), ("A", 0, "D"), ("A", 0, "E")]));
        let r = micro_prf(&p, &g).unwrap();
        assert_eq!(r.recall, 0.25);
        let per_doc = per_document_f1(&p, &g).unwrap();
        let macro_f1 = per_doc.iter().map(|(_, f)| f).sum::<f64>() / 2.0;
        assert_eq!(macro_f1, 0.5);
        assert!((r.f1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn linking_eval_examples() {
        let set = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        let gold = BTreeMap::from([("d".to_string(), set(&["A", "B"]))]);
        let r = linking_doc_eval(&BTreeMap::from([("d".to_string(), set(&["A"]))]), &gold);
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        let r = linking_doc_eval(&gold.clone(), &gold);
        assert_eq!(r.f1, 1.0);
        // Duplicate mentions of A collapse into one set member.
        let dup: BTreeSet<String> = ["A", "A", "B"].iter().map(|s| s.to_string()).collect();
        assert_eq!(linking_doc_eval(&BTreeMap::from([("d".to_string(), dup)]), &gold).f1, 1.0);
    }

    #[test]
    fn threshold_tuning_picks_best_grid_point() {
        let scored = BTreeMap::from([(
            "d".to_string(),
            vec![
                ScoredTuple { tuple: Tuple::new("A", 0, "B"), probability: 0.9 },
                ScoredTuple { tuple: Tuple::new("A", 0, "C"), probability: 0.42 },
                ScoredTuple { tuple: Tuple::new("B", 0, "C"), probability: 0.3 },
            ],
        )]);
        let g = gold("d", &[("A", 0, "B"), ("A", 0, "C")]);
        let (t, r) = tune_threshold(&scored, &g).unwrap();
        assert_eq!(t, 0.35);
        assert_eq!(r.f1, 1.0);
        assert_eq!(threshold_grid().len(), 19);
    }

    #[test]
    fn table_and_json() {
        let r = MetricReport::from_counts(2, 1, 2);
        let table = render_table(&[("joint", &r)]);
        assert!(table.lines().nth(1).unwrap().starts_with("joint"));
        assert!(table.contains("0.667"));
        let json = render_json(&[("joint", &r)]);
        assert_eq!(json["joint"]["true_positives"], 2);
        assert_eq!(json["joint"]["recall"], 0.5);
    }
}
