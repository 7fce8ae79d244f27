use std::collections::BTreeMap;

use super::heads::{DocForward, RelationTensor};
use super::linking::LinkingMatrix;
use crate::ndtensor::{smax_kernel, Tape, Var};
use crate::{Error, Result};

/// `(head entity, relation, tail entity)` by index.
pub type TupleIndex = (usize, usize, usize);

/// Mentions allowed to represent each candidate entity, ascending.
pub type MentionSets = BTreeMap<usize, Vec<usize>>;

/// For each candidate entity, the `k` mentions with the highest linking probability. Ties go
/// to the earlier mention.
pub fn select_top_k_mentions(linking: &LinkingMatrix, k: usize) -> Result<MentionSets> {
    if k == 0 {
        return Err(Error::Input("top-k mention restriction needs k >= 1".into()));
    }
    let values = linking.values();
    Ok(linking
        .entities()
        .into_iter()
        .map(|e| {
            let mut ms = linking.mentions_of(e);
            ms.sort_by(|a, b| values[b.1].total_cmp(&values[a.1]).then(a.0.cmp(&b.0)));
            ms.truncate(k);
            let mut kept: Vec<usize> = ms.into_iter().map(|(m, _)| m).collect();
            kept.sort_unstable();
            (e, kept)
        })
        .collect())
}

/// Index plan for pooling a list of tuples over mention pairs. Each scoreable tuple owns one
/// contiguous segment of pair products `p(e_k|m_i) p(r|m_i,m_j) p(e_l|m_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolPlan {
    tuples: Vec<TupleIndex>,
    segment: Vec<Option<usize>>,
    head_slots: Vec<usize>,
    rel_index: Vec<usize>,
    tail_slots: Vec<usize>,
    offsets: Vec<usize>,
}

impl PoolPlan {
    pub fn new(
        linking: &LinkingMatrix,
        relations: &RelationTensor,
        sets: &MentionSets,
        tuples: Vec<TupleIndex>,
    ) -> Self {
        let mut plan = Self {
            segment: Vec::with_capacity(tuples.len()),
            tuples: Vec::new(),
            head_slots: Vec::new(),
            rel_index: Vec::new(),
            tail_slots: Vec::new(),
            offsets: vec![0],
        };
        let empty = Vec::new();
        for &(k, r, l) in &tuples {
            let before = plan.head_slots.len();
            for &i in sets.get(&k).unwrap_or(&empty) {
                for &j in sets.get(&l).unwrap_or(&empty) {
                    let (Some(hs), Some(ri), Some(ts)) =
                        (linking.slot(i, k), relations.index(i, j, r), linking.slot(j, l))
                    else {
                        continue;
                    };
                    plan.head_slots.push(hs);
                    plan.rel_index.push(ri);
                    plan.tail_slots.push(ts);
                }
            }
            if plan.head_slots.len() > before {
                plan.segment.push(Some(plan.offsets.len() - 1));
                plan.offsets.push(plan.head_slots.len());
            } else {
                plan.segment.push(None);
            }
        }
        plan.tuples = tuples;
        plan
    }

    pub fn tuples(&self) -> &[TupleIndex] {
        &self.tuples
    }

    /// Segment of tuple `t`, `None` when no mention pair can express it.
    pub fn segment(&self, t: usize) -> Option<usize> {
        self.segment[t]
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_pairs(&self) -> usize {
        self.head_slots.len()
    }

    /// Pooled probability per segment on the tape, `None` without scoreable tuples.
    pub fn pool_tape(&self, tape: &mut Tape, fwd: &DocForward) -> Result<Option<Var>> {
        if self.num_segments() == 0 {
            return Ok(None);
        }
        let (Some(link), Some(rel)) = (fwd.link, fwd.rel) else {
            return Err(Error::Input("pool plan has pairs but the forward pass has no scores".into()));
        };
        let a = tape.gather(link, &self.head_slots)?;
        let b = tape.gather(rel, &self.rel_index)?;
        let c = tape.gather(link, &self.tail_slots)?;
        let ab = tape.mul(a, b)?;
        let abc = tape.mul(ab, c)?;
        Ok(Some(tape.segment_smax(abc, fwd.tau, &self.offsets)?))
    }

    /// Pooled probability per tuple from plain values, with the same arithmetic as
    /// [`PoolPlan::pool_tape`]. Unscoreable tuples give `None`.
    pub fn pool_values(&self, link: &[f64], rel: &[f64], tau: f64) -> Vec<Option<f64>> {
        let products: Vec<f64> = (0..self.num_pairs())
            .map(|p| link[self.head_slots[p]] * rel[self.rel_index[p]] * link[self.tail_slots[p]])
            .collect();
        self.segment
            .iter()
            .map(|seg| seg.map(|s| smax_kernel(&products[self.offsets[s]..self.offsets[s + 1]], tau).0))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(candidates: Vec<Vec<usize>>, values: Vec<f64>) -> LinkingMatrix {
        LinkingMatrix::layout(candidates).unwrap().with_values(values).unwrap()
    }

    #[test]
    fn k_at_least_m_is_identity() {
        let lm = matrix(vec![vec![0, 1], vec![1], vec![0]], vec![0.3, 0.7, 1.0, 1.0]);
        let sets = select_top_k_mentions(&lm, 3).unwrap();
        assert_eq!(sets[&0], vec![0, 2]);
        assert_eq!(sets[&1], vec![0, 1]);
        assert!(select_top_k_mentions(&lm, 0).is_err());
    }

    #[test]
    fn k_one_keeps_argmax() {
        let lm = matrix(vec![vec![0, 1], vec![0, 1], vec![0]], vec![0.4, 0.6, 0.9, 0.1, 0.4]);
        let sets = select_top_k_mentions(&lm, 1).unwrap();
        assert_eq!(sets[&0], vec![1]);
        assert_eq!(sets[&1], vec![0]);
    }

    #[test]
    fn k_two_matches_sort_on_four_mentions() {
        // Entity 0 at probabilities 0.2, 0.9, 0.5, 0.5 over mentions 0..4.
        let lm = matrix(
            vec![vec![0, 1], vec![0, 1], vec![0, 1], vec![0, 1]],
            vec![0.2, 0.8, 0.9, 0.1, 0.5, 0.5, 0.5, 0.5],
        );
        let sets = select_top_k_mentions(&lm, 2).unwrap();
        for (e, kept) in &sets {
            let mut order: Vec<usize> = (0..4).collect();
            order.sort_by(|&a, &b| {
                let pa = lm.probability(a, *e).unwrap();
                let pb = lm.probability(b, *e).unwrap();
                pb.partial_cmp(&pa).unwrap().then(a.cmp(&b))
            });
            let mut expected = order[..2].to_vec();
            expected.sort();
            assert_eq!(kept, &expected);
        }
        assert_eq!(sets[&0], vec![1, 2]);
        assert_eq!(sets[&1], vec![0, 2]);
    }

    #[test]
    fn unscoreable_tuple_is_flagged() {
        // Mentions 0 and 1 both list only entity 0: (0, r, 1) has no pair.
        let lm = matrix(vec![vec![0], vec![0], vec![1]], vec![1.0, 1.0, 1.0]);
        let rel = RelationTensor::new(vec![0, 1, 2], 1, vec![0.5; 6]).unwrap();
        let sets = select_top_k_mentions(&lm, 5).unwrap();
        let plan = PoolPlan::new(&lm, &rel, &sets, vec![(0, 0, 1), (0, 0, 0), (1, 0, 2)]);
        assert_eq!(plan.segment(0), Some(0));
        // Same-entity tuple pairs the two distinct mentions of entity 0.
        assert_eq!(plan.segment(1), Some(1));
        assert_eq!(plan.segment(2), None);
        let pooled = plan.pool_values(lm.values(), rel.values(), 1.0);
        assert_eq!(pooled, vec![Some(0.5), Some(0.5), None]);
    }
}
