//! Probability heads on top of the encoder: entity linking, mention-pair relation scores,
//! tuple combination, soft-max pooling and document-level entity scores.

mod heads;
mod linking;
mod model;
mod pooling;
mod predict;

pub use heads::{
    doc_representation, entity_vectors, forward, init_scorer, linking_probabilities, relation_probabilities,
    temperature, Architecture, DocForward, DocInput, RelationTensor,
};
pub use linking::LinkingMatrix;
pub use model::{Model, PretrainedVectors, VectorKind};
pub use pooling::{select_top_k_mentions, MentionSets, PoolPlan, TupleIndex};
pub use predict::{predict_graph, score_document, ScoredTuple};

use crate::ndtensor::smax_kernel;
use crate::{Error, Result};

pub const ENTITY_EMBEDDING: &str = "scorer.entity_embedding";
pub const TYPE_EMBEDDING: &str = "scorer.type_embedding";
pub const DESC_PROJECTION: &str = "scorer.desc_projection";
pub const GRAPH_PROJECTION: &str = "scorer.graph_projection";
pub const DESC_VECTORS: &str = "pretrained.desc";
pub const GRAPH_VECTORS: &str = "pretrained.graph";
pub const SMAX_RHO: &str = "scorer.smax_rho";

/// Soft maximum: softmax(values / tau) weighted average of `values`.
pub fn smax(values: &[f64], tau: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("smax of an empty list".into()));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Input(format!("smax temperature {tau} must be positive and finite")));
    }
    Ok(smax_kernel(values, tau).0)
}

/// `p(e_k | m_i) * p(r | m_i, m_j) * p(e_l | m_j)`, multiplied left to right.
pub fn tuple_mention_probability(p_head: f64, p_rel: f64, p_tail: f64) -> f64 {
    p_head * p_rel * p_tail
}

/// Smax over the per-pair probabilities of one tuple. `None` marks an unscoreable tuple,
/// whose probability is 0.
pub fn pool_document(pair_probabilities: &[f64], tau: f64) -> Result<Option<f64>> {
    if pair_probabilities.is_empty() {
        return Ok(None);
    }
    smax(pair_probabilities, tau).map(Some)
}

/// Maximum linking probability of `entity` over the mentions that list it, and whether any
/// mention does.
pub fn doc_entity_probability(linking: &LinkingMatrix, entity: usize) -> (f64, bool) {
    let mut best: Option<f64> = None;
    for m in 0..linking.num_mentions() {
        if let Some(p) = linking.probability(m, entity) {
            best = Some(best.map_or(p, |b: f64| b.max(p)));
        }
    }
    match best {
        Some(p) => (p, true),
        None => (0.0, false),
    }
}
