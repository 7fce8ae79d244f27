use std::collections::{BTreeMap, BTreeSet};

use crate::candidates::CandidateTable;
use crate::corpus::{AnnotationGraph, Corpus, LinkTable};
use crate::ndtensor::Tape;
use crate::scorer::{doc_entity_probability, score_document, DocInput, Model, ScoredTuple};
use crate::{Error, Result};

use super::metrics::{threshold_predictions, PredictedTuples};

fn document<'c>(corpus: &'c Corpus, doc_id: &str) -> Result<&'c crate::corpus::Document> {
    corpus
        .document(doc_id)
        .ok_or_else(|| Error::Input(format!("document {doc_id} is not in the corpus")))
}

/// Joint-model inputs over each mention's retrieved candidates.
pub fn joint_inputs(model: &Model, corpus: &Corpus, doc_ids: &[String], candidates: &CandidateTable) -> Result<Vec<DocInput>> {
    doc_ids
        .iter()
        .map(|d| model.doc_input(document(corpus, d)?, corpus.mentions_of(d), candidates))
        .collect()
}

/// Hard-link inputs: each mention fixed to the entity in `links`, unlinked mentions
/// excluded from scoring.
pub fn pipeline_inputs(model: &Model, corpus: &Corpus, doc_ids: &[String], links: &LinkTable) -> Result<Vec<DocInput>> {
    let none = BTreeMap::new();
    doc_ids
        .iter()
        .map(|d| model.hard_doc_input(document(corpus, d)?, corpus.mentions_of(d), links.get(d).unwrap_or(&none)))
        .collect()
}

/// Every scoreable tuple per document, highest probability first.
pub fn score_documents(model: &Model, inputs: &[DocInput]) -> Result<BTreeMap<String, Vec<ScoredTuple>>> {
    inputs
        .iter()
        .map(|doc| Ok((doc.doc_id.clone(), score_document(model, doc)?)))
        .collect()
}

/// Pipeline baseline predictions: relation scoring under hard links, then the threshold.
pub fn pipeline_baseline(model: &Model, inputs: &[DocInput], threshold: f64) -> Result<PredictedTuples> {
    if let Some(d) = inputs.iter().find(|d| !d.hard_links) {
        return Err(Error::Input(format!("document {} is not hard-linked", d.doc_id)));
    }
    Ok(threshold_predictions(&score_documents(model, inputs)?, threshold))
}

/// Entities whose document-level linking probability reaches `threshold`.
pub fn joint_doc_entities(model: &Model, input: &DocInput, threshold: f64) -> Result<BTreeSet<String>> {
    let mut tape = Tape::new(&model.params);
    let fwd = model.forward_eval(&mut tape, input)?;
    Ok(fwd
        .linking
        .entities()
        .into_iter()
        .filter(|&e| doc_entity_probability(&fwd.linking, e).0 >= threshold)
        .map(|e| model.entity_id(e).to_string())
        .collect())
}

/// Entities chosen by a link table, per document.
pub fn linked_doc_entities(links: &LinkTable, doc_ids: &[String]) -> BTreeMap<String, BTreeSet<String>> {
    doc_ids
        .iter()
        .map(|d| {
            let set = links.get(d).map(|m| m.values().cloned().collect()).unwrap_or_default();
            (d.clone(), set)
        })
        .collect()
}

/// Gold entity set of each document: the entities of its annotated tuples.
pub fn gold_entity_sets(gold: &BTreeMap<String, AnnotationGraph>) -> BTreeMap<String, BTreeSet<String>> {
    gold.iter().map(|(d, g)| (d.clone(), g.entity_set())).collect()
}

/// Gold graphs restricted to `doc_ids`; documents without annotations get empty graphs.
pub fn gold_subset(gold: &BTreeMap<String, AnnotationGraph>, doc_ids: &[String]) -> BTreeMap<String, AnnotationGraph> {
    doc_ids
        .iter()
        .map(|d| (d.clone(), gold.get(d).cloned().unwrap_or_else(|| AnnotationGraph::new(d.as_str()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticConfig, Tuple, Vocabulary};
    use crate::evaluator::micro_prf;
    use crate::ndtensor::Tensor;
    use crate::Config;

    fn setup() -> (crate::corpus::SyntheticCorpus, Model) {
        let synth = generate_synthetic_corpus(&SyntheticConfig::default(), 3).unwrap();
        let vocab = Vocabulary::build(&synth.corpus.documents, 1);
        let config = Config {
            embed_dim: 8,
            blocks: 1,
            heads: 2,
            ..Config::default()
        };
        let model = Model::new(&config, vocab, &synth.corpus.kb, None).unwrap();
        (synth, model)
    }

    /// Relation head fixed at probability `p` for every pair.
    fn constant_relations(model: &mut Model, p: f64) {
        let r = model.arch.num_relations;
        let n = model.arch.encoder.embed_dim;
        for (name, value) in [
            ("scorer.rel.w2", Tensor::zeros(&[n, r])),
            ("scorer.rel.b2", Tensor::filled(&[r], (p / (1.0 - p)).ln())),
        ] {
            let id = model.params.require(name).unwrap();
            *model.params.get_mut(id).value_mut() = value;
        }
    }

    #[test]
    fn correct_links_reduce_to_relation_extraction() {
        let (synth, mut model) = setup();
        constant_relations(&mut model, 0.9);
        let ids = synth.splits.train.clone();
        let inputs = pipeline_inputs(&model, &synth.corpus, &ids, &synth.gold_links).unwrap();
        let predicted = pipeline_baseline(&model, &inputs, 0.5).unwrap();
        let gold = gold_subset(&synth.corpus.annotations, &ids);
        // Every relation between every linked pair is predicted, so recall is perfect.
        assert_eq!(micro_prf(&predicted, &gold).unwrap().recall, 1.0);
    }

    #[test]
    fn wrong_head_links_give_zero_recall() {
        let (synth, mut model) = setup();
        constant_relations(&mut model, 0.9);
        let ids = synth.splits.train.clone();
        let gold = gold_subset(&synth.corpus.annotations, &ids);
        let heads: BTreeSet<String> = gold.values().flat_map(|g| g.tuples.iter().map(|t| t.head.clone())).collect();
        let decoy = synth.corpus.kb.entities().find(|e| e.entity_id.starts_with('D')).unwrap().entity_id.clone();
        let mut links = synth.gold_links.clone();
        for per_doc in links.values_mut() {
            for entity in per_doc.values_mut() {
                if heads.contains(entity) {
                    *entity = decoy.clone();
                }
            }
        }
        let inputs = pipeline_inputs(&model, &synth.corpus, &ids, &links).unwrap();
        let predicted = pipeline_baseline(&model, &inputs, 0.5).unwrap();
        assert_eq!(micro_prf(&predicted, &gold).unwrap().recall, 0.0);
    }

    #[test]
    fn soft_inputs_are_rejected_by_the_baseline() {
        let (synth, model) = setup();
        let table = CandidateTable::new();
        let ids = synth.splits.dev.clone();
        let inputs = joint_inputs(&model, &synth.corpus, &ids, &table).unwrap();
        assert!(pipeline_baseline(&model, &inputs, 0.5).is_err());
    }

    #[test]
    fn entity_sets() {
        let mut g = AnnotationGraph::new("d");
        g.tuples.insert(Tuple::new("A", 0, "B"));
        let gold = BTreeMap::from([("d".to_string(), g)]);
        assert_eq!(gold_entity_sets(&gold)["d"].len(), 2);
        let sub = gold_subset(&gold, &["d".into(), "e".into()]);
        assert!(sub["e"].tuples.is_empty());
        let links = LinkTable::from([("d".to_string(), BTreeMap::from([(0, "A".to_string()), (2, "A".to_string())]))]);
        assert_eq!(linked_doc_entities(&links, &["d".into()])["d"].len(), 1);
    }
}
