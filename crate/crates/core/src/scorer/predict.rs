use super::heads::DocInput;
use super::model::Model;
use super::pooling::{select_top_k_mentions, PoolPlan, TupleIndex};
use crate::corpus::Tuple;
use crate::ndtensor::Tape;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTuple {
    pub tuple: Tuple,
    pub probability: f64,
}

/// Pooled probability of every scoreable `(e_k, r, e_l)` with `e_k != e_l` drawn from the
/// document's candidate entities, highest first. Pooling uses the same top-k mention
/// restriction as training.
pub fn score_document(model: &Model, doc: &DocInput) -> Result<Vec<ScoredTuple>> {
    let mut tape = Tape::new(&model.params);
    let fwd = model.forward_eval(&mut tape, doc)?;
    let entities = fwd.linking.entities();
    let relations = model.arch.num_relations;
    let mut tuples: Vec<TupleIndex> = Vec::with_capacity(entities.len().pow(2) * relations);
    for &k in &entities {
        for &l in entities.iter().filter(|&&l| l != k) {
            tuples.extend((0..relations).map(|r| (k, r, l)));
        }
    }
    let sets = select_top_k_mentions(&fwd.linking, model.config.top_k)?;
    let plan = PoolPlan::new(&fwd.linking, &fwd.relations, &sets, tuples);
    let tau = tape.value(fwd.tau).data()[0];
    let pooled = plan.pool_values(fwd.linking.values(), fwd.relations.values(), tau);
    let mut out: Vec<ScoredTuple> = plan
        .tuples()
        .iter()
        .zip(pooled)
        .filter_map(|(&(k, r, l), p)| {
            p.map(|probability| ScoredTuple {
                tuple: Tuple::new(model.entity_id(k), r, model.entity_id(l)),
                probability,
            })
        })
        .collect();
    out.sort_by(|a, b| b.probability.total_cmp(&a.probability).then_with(|| a.tuple.cmp(&b.tuple)));
    Ok(out)
}

/// Scored tuples at or above `threshold`.
pub fn predict_graph(model: &Model, doc: &DocInput, threshold: f64) -> Result<Vec<ScoredTuple>> {
    let mut scored = score_document(model, doc)?;
    scored.retain(|s| s.probability >= threshold);
    Ok(scored)
}
