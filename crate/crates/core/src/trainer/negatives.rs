use std::collections::BTreeSet;

use rand::Rng;

use crate::scorer::TupleIndex;

/// Up to `n` tuples `(e_k, r, e_l)`, `e_k != e_l`, drawn uniformly without replacement from
/// the candidate entities and relations, never from `gold`. Returned in ascending order.
pub fn sample_negative_tuples<R: Rng + ?Sized>(
    candidate_entities: &[usize],
    gold: &BTreeSet<TupleIndex>,
    num_relations: usize,
    n: usize,
    rng: &mut R,
) -> BTreeSet<TupleIndex> {
    let entities: Vec<usize> = candidate_entities.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let l = entities.len();
    if l < 2 || num_relations == 0 || n == 0 {
        return BTreeSet::new();
    }
    let space = l * (l - 1) * num_relations;
    let decode = |t: usize| -> TupleIndex {
        let r = t % num_relations;
        let pair = t / num_relations;
        let (a, b) = (pair / (l - 1), pair % (l - 1));
        let b = if b < a { b } else { b + 1 };
        (entities[a], r, entities[b])
    };
    let encode = |&(k, r, tail): &TupleIndex| -> Option<usize> {
        let a = entities.binary_search(&k).ok()?;
        let b = entities.binary_search(&tail).ok()?;
        if a == b || r >= num_relations {
            return None;
        }
        let b = if b < a { b } else { b - 1 };
        Some((a * (l - 1) + b) * num_relations + r)
    };
    let mut golds: Vec<usize> = gold.iter().filter_map(encode).collect();
    golds.sort_unstable();
    golds.dedup();
    let free = space - golds.len();
    if free <= n {
        return (0..space).filter(|t| golds.binary_search(t).is_err()).map(decode).collect();
    }
    rand::seq::index::sample(rng, free, n)
        .into_iter()
        .map(|x| {
            // The x-th index of the space that is not gold.
            let mut t = x;
            for &g in &golds {
                if g <= t {
                    t += 1;
                } else {
                    break;
                }
            }
            decode(t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn full_gold_leaves_nothing() {
        let gold: BTreeSet<TupleIndex> = [(0, 0, 1), (1, 0, 0)].into();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_negative_tuples(&[0, 1], &gold, 1, 10, &mut rng).is_empty());
    }

    #[test]
    fn two_entities_one_relation_has_two_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = sample_negative_tuples(&[4, 9], &BTreeSet::new(), 1, 100, &mut rng);
        assert_eq!(all, [(4, 0, 9), (9, 0, 4)].into());
    }

    #[test]
    fn samples_avoid_gold_and_stay_in_space() {
        let entities = [1, 3, 4, 7, 8];
        let gold: BTreeSet<TupleIndex> = [(1, 0, 3), (3, 1, 1), (7, 2, 8), (8, 0, 4), (2, 0, 9)].into();
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_negative_tuples(&entities, &gold, 3, 12, &mut rng);
            assert_eq!(s.len(), 12);
            for t in &s {
                assert!(!gold.contains(t));
                assert!(entities.contains(&t.0) && entities.contains(&t.2) && t.0 != t.2 && t.1 < 3);
            }
        }
    }

    #[test]
    fn deterministic_and_exhaustive_when_small() {
        let entities = [0, 1, 2];
        let gold: BTreeSet<TupleIndex> = [(0, 0, 1)].into();
        let draw = |seed| sample_negative_tuples(&entities, &gold, 2, 5, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(draw(3), draw(3));
        let all = sample_negative_tuples(&entities, &gold, 2, 100, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(all.len(), 3 * 2 * 2 - 1);
    }

    #[test]
    fn draws_are_roughly_uniform() {
        let entities = [0, 1, 2];
        let gold: BTreeSet<TupleIndex> = [(0, 0, 1), (2, 0, 1)].into();
        let mut counts = std::collections::BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..4000 {
            for t in sample_negative_tuples(&entities, &gold, 1, 1, &mut rng) {
                *counts.entry(t).or_insert(0usize) += 1;
            }
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&c| (800..1200).contains(&c)), "{counts:?}");
    }
}
