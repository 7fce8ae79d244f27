//! Prediction files: `doc_id, head, relation, tail, probability` per line, each document's
//! tuples by descending probability.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use docgraph::corpus::{KnowledgeBase, Tuple};
use docgraph::evaluator::PredictedTuples;
use docgraph::scorer::ScoredTuple;
use docgraph::Error;

use crate::{io_error, Failure};

pub fn render_predictions(scored: &BTreeMap<String, Vec<ScoredTuple>>, relations: &[String], threshold: f64) -> String {
    let mut out = String::new();
    for (doc, tuples) in scored {
        for s in tuples.iter().filter(|s| s.probability >= threshold) {
            let t = &s.tuple;
            let _ = writeln!(out, "{doc}\t{}\t{}\t{}\t{:.6}", t.head, relations[t.relation], t.tail, s.probability);
        }
    }
    out
}

pub fn read_predictions(path: &Path, kb: &KnowledgeBase) -> Result<PredictedTuples, Failure> {
    let text = std::fs::read_to_string(path).map_err(io_error(path))?;
    let bad = |line: usize, detail: String| Failure::Run(Error::Input(format!("{}:{line}: {detail}", path.display())));
    let mut out: PredictedTuples = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(line_no, format!("expected 5 fields, found {}", f.len())));
        }
        let relation = kb
            .relation_index(f[2])
            .ok_or_else(|| bad(line_no, format!("unknown relation {:?}", f[2])))?;
        f[4]
            .parse::<f64>()
            .map_err(|_| bad(line_no, format!("bad probability {:?}", f[4])))?;
        out.entry(f[0].to_string())
            .or_default()
            .insert(Tuple::new(f[1], relation, f[3]));
    }
    Ok(out)
}
