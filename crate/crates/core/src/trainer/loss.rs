use crate::ndtensor::{Tape, Var};
use crate::{Error, Result};

/// Probabilities inside logs are clamped to `[EPS, 1 - EPS]`.
pub const EPS: f64 = 1e-7;

fn check(probs: usize, labels: usize, normalizer: f64) -> Result<()> {
    if probs != labels {
        return Err(Error::Input(format!("{probs} probabilities for {labels} labels")));
    }
    if !(normalizer > 0.0) {
        return Err(Error::Input(format!("loss normalizer {normalizer} must be positive")));
    }
    Ok(())
}

/// `-(1/normalizer) Σ [y w log p + (1 - y) log(1 - p)]` with `p` clamped.
pub fn weighted_bce(probs: &[f64], labels: &[bool], positive_weight: f64, normalizer: f64) -> Result<f64> {
    check(probs.len(), labels.len(), normalizer)?;
    let mut pos = 0.0;
    let mut neg = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(EPS, 1.0 - EPS);
        if y {
            pos += positive_weight * p.ln();
        } else {
            neg += (1.0 - p).ln();
        }
    }
    Ok(-(pos + neg) / normalizer)
}

/// Tape version of [`weighted_bce`].
pub fn weighted_bce_tape(tape: &mut Tape, probs: Var, labels: &[bool], positive_weight: f64, normalizer: f64) -> Result<Var> {
    check(tape.value(probs).len(), labels.len(), normalizer)?;
    let p = tape.clamp(probs, EPS, 1.0 - EPS)?;
    let log_p = tape.log(p)?;
    let q = tape.one_minus(p)?;
    let log_q = tape.log(q)?;
    let pos_w: Vec<f64> = labels.iter().map(|&y| if y { positive_weight } else { 0.0 }).collect();
    let neg_w: Vec<f64> = labels.iter().map(|&y| if y { 0.0 } else { 1.0 }).collect();
    let pos = tape.weighted_sum(log_p, &pos_w)?;
    let neg = tape.weighted_sum(log_q, &neg_w)?;
    let total = tape.add(pos, neg)?;
    Ok(tape.scale(total, -1.0 / normalizer)?)
}

/// Tuple term, normalized by the number of gold tuples. `None` when there are none.
pub fn tuple_loss(probs: &[f64], labels: &[bool], tuple_weight: f64) -> Result<Option<f64>> {
    let gold = labels.iter().filter(|&&y| y).count();
    if gold == 0 {
        return Ok(None);
    }
    weighted_bce(probs, labels, tuple_weight, gold as f64).map(Some)
}

/// Entity term, normalized by the number of gold entities. `None` when there are none.
pub fn entity_loss(probs: &[f64], labels: &[bool], entity_weight: f64) -> Result<Option<f64>> {
    tuple_loss(probs, labels, entity_weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndtensor::{ParamStore, Tensor};

    #[test]
    fn perfect_predictions_cost_nothing() {
        let l = tuple_loss(&[1.0 - EPS, EPS, 1.0, 0.0], &[true, false, true, false], 5.0).unwrap().unwrap();
        assert!(l.abs() < 1e-5);
    }

    #[test]
    fn single_positive_at_half() {
        assert!((tuple_loss(&[0.5], &[true], 1.0).unwrap().unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((entity_loss(&[0.5], &[true], 1.0).unwrap().unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn no_positives_skips_the_term() {
        assert_eq!(tuple_loss(&[0.3, 0.2], &[false, false], 5.0).unwrap(), None);
        assert_eq!(entity_loss(&[], &[], 2.0).unwrap(), None);
    }

    #[test]
    fn mixed_fixture_matches_formula() {
        let p = [0.8, 0.3, 0.4, 0.1];
        let y = [true, true, false, false];
        // -(1/2) [5 ln 0.8 + 5 ln 0.3 + ln 0.6 + ln 0.9]
        let expected = -(5.0 * 0.8f64.ln() + 5.0 * 0.3f64.ln() + 0.6f64.ln() + 0.9f64.ln()) / 2.0;
        assert!((tuple_loss(&p, &y, 5.0).unwrap().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn boundary_probabilities_stay_finite() {
        let l = weighted_bce(&[0.0, 1.0, 0.0, 1.0], &[true, false, false, true], 5.0, 2.0).unwrap();
        assert!(l.is_finite());
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let p = tape.leaf(Tensor::vector(vec![0.0, 1.0])).unwrap();
        let l = weighted_bce_tape(&mut tape, p, &[true, false], 5.0, 1.0).unwrap();
        assert!(tape.value(l).data()[0].is_finite());
        let g = tape.backward(l).unwrap();
        assert!(g.wrt(p).unwrap().is_finite());
    }

    #[test]
    fn tape_matches_plain() {
        let probs = vec![0.9, 0.2, 0.55, 0.01, 0.7];
        let labels = [true, false, true, false, false];
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let p = tape.leaf(Tensor::vector(probs.clone())).unwrap();
        let l = weighted_bce_tape(&mut tape, p, &labels, 3.0, 2.0).unwrap();
        let plain = weighted_bce(&probs, &labels, 3.0, 2.0).unwrap();
        assert!((tape.value(l).data()[0] - plain).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(weighted_bce(&[0.5], &[true, false], 1.0, 1.0).is_err());
        assert!(weighted_bce(&[0.5], &[true], 1.0, 0.0).is_err());
    }
}
