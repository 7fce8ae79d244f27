use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::loss::weighted_bce_tape;
use super::negatives::sample_negative_tuples;
use crate::candidates::CandidateTable;
use crate::config::Config;
use crate::corpus::{AnnotationGraph, Corpus, LinkTable};
use crate::evaluator::{gold_subset, joint_inputs, pipeline_inputs, score_documents, tune_threshold};
use crate::ndtensor::{AdamState, Mode, Tape, Tensor, Var};
use crate::scorer::{forward, select_top_k_mentions, Architecture, DocInput, Model, PoolPlan, TupleIndex};
use crate::{streams, Error, Result};

/// Objective weights and optimization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub tuple_weight: f64,
    pub entity_weight: f64,
    pub alpha: f64,
    pub negatives: usize,
    pub top_k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
}

impl From<&Config> for LossConfig {
    fn from(c: &Config) -> Self {
        Self {
            tuple_weight: c.tuple_weight,
            entity_weight: c.entity_weight,
            alpha: c.alpha,
            negatives: c.negatives,
            top_k: c.top_k,
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            patience: c.patience,
            seed: c.seed,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tuple_weight > 0.0) || !(self.entity_weight >= 0.0) || !(self.alpha >= 0.0) {
            return Err(Error::Config("weights must be positive and alpha non-negative".into()));
        }
        if self.negatives == 0 || self.top_k == 0 || self.batch_size == 0 {
            return Err(Error::Config("negatives, top_k and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Model inputs and gold tuples (as entity indices) for one training document.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingDoc {
    pub input: DocInput,
    pub gold: BTreeSet<TupleIndex>,
}

impl TrainingDoc {
    pub fn gold_entities(&self) -> BTreeSet<usize> {
        self.gold.iter().flat_map(|&(k, _, l)| [k, l]).collect()
    }
}

fn attach_gold(model: &Model, inputs: Vec<DocInput>, gold: &BTreeMap<String, AnnotationGraph>) -> Result<Vec<TrainingDoc>> {
    inputs
        .into_iter()
        .map(|input| {
            let tuples = gold
                .get(&input.doc_id)
                .map(|g| {
                    g.tuples
                        .iter()
                        .map(|t| {
                            let k = model.entity_index(&t.head).ok_or_else(|| Error::UnknownEntity(t.head.clone()))?;
                            let l = model.entity_index(&t.tail).ok_or_else(|| Error::UnknownEntity(t.tail.clone()))?;
                            Ok((k, t.relation, l))
                        })
                        .collect::<Result<BTreeSet<_>>>()
                })
                .transpose()?
                .unwrap_or_default();
            Ok(TrainingDoc { input, gold: tuples })
        })
        .collect()
}

/// Joint-model training documents over retrieved candidates.
pub fn training_docs(
    model: &Model,
    corpus: &Corpus,
    doc_ids: &[String],
    candidates: &CandidateTable,
    gold: &BTreeMap<String, AnnotationGraph>,
) -> Result<Vec<TrainingDoc>> {
    attach_gold(model, joint_inputs(model, corpus, doc_ids, candidates)?, gold)
}

/// Hard-link training documents for the pipeline baseline.
pub fn hard_training_docs(
    model: &Model,
    corpus: &Corpus,
    doc_ids: &[String],
    links: &LinkTable,
    gold: &BTreeMap<String, AnnotationGraph>,
) -> Result<Vec<TrainingDoc>> {
    attach_gold(model, pipeline_inputs(model, corpus, doc_ids, links)?, gold)
}

/// Documents and gold graphs used to pick the epoch and threshold.
#[derive(Clone, Debug, Default)]
pub struct DevSet {
    pub inputs: Vec<DocInput>,
    pub gold: BTreeMap<String, AnnotationGraph>,
}

impl DevSet {
    pub fn new(inputs: Vec<DocInput>, gold: &BTreeMap<String, AnnotationGraph>) -> Self {
        let ids: Vec<String> = inputs.iter().map(|d| d.doc_id.clone()).collect();
        Self {
            gold: gold_subset(gold, &ids),
            inputs,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Loss node and the values of its two terms.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub tuple: Option<f64>,
    pub entity: Option<f64>,
}

/// Probability vector with scoreable items first and constant zeros for the rest, plus
/// labels in the same order.
fn assemble(
    tape: &mut Tape,
    scored: Option<Var>,
    scored_labels: Vec<bool>,
    unscored_labels: Vec<bool>,
) -> Result<(Var, Vec<bool>)> {
    let zeros = (!unscored_labels.is_empty())
        .then(|| tape.constant(Tensor::zeros(&[unscored_labels.len()])))
        .transpose()?;
    let probs = match (scored, zeros) {
        (Some(s), Some(z)) => tape.concat_cols(&[s, z])?,
        (Some(s), None) => s,
        (None, Some(z)) => z,
        (None, None) => return Err(Error::Input("loss over no items".into())),
    };
    let mut labels = scored_labels;
    labels.extend(unscored_labels);
    Ok((probs, labels))
}

/// Tuple term over gold plus `negatives`, and, when `alpha > 0` and links are soft, the
/// entity term over gold entities plus the entities of the negatives. `None` when the
/// document has no gold tuples.
#[allow(clippy::too_many_arguments)]
pub fn document_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    arch: &Architecture,
    doc: &TrainingDoc,
    negatives: &BTreeSet<TupleIndex>,
    config: &LossConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Option<LossParts>> {
    if doc.gold.is_empty() {
        return Ok(None);
    }
    let fwd = forward(tape, arch, &doc.input, mode, rng)?;
    let items: Vec<TupleIndex> = doc.gold.iter().chain(negatives.iter().filter(|t| !doc.gold.contains(t))).copied().collect();
    let sets = select_top_k_mentions(&fwd.linking, config.top_k)?;
    let plan = PoolPlan::new(&fwd.linking, &fwd.relations, &sets, items);
    let pooled = plan.pool_tape(tape, &fwd)?;
    let (mut segs, mut scored_labels, mut unscored_labels) = (Vec::new(), Vec::new(), Vec::new());
    for (t, tuple) in plan.tuples().iter().enumerate() {
        let y = doc.gold.contains(tuple);
        match plan.segment(t) {
            Some(s) => {
                segs.push(s);
                scored_labels.push(y);
            }
            None => unscored_labels.push(y),
        }
    }
    let scored = match pooled {
        Some(p) => Some(tape.gather(p, &segs)?),
        None => None,
    };
    let (probs, labels) = assemble(tape, scored, scored_labels, unscored_labels)?;
    let tuple_term = weighted_bce_tape(tape, probs, &labels, config.tuple_weight, doc.gold.len() as f64)?;
    let tuple_value = tape.value(tuple_term).data()[0];

    let gold_entities = doc.gold_entities();
    if config.alpha == 0.0 || doc.input.hard_links {
        return Ok(Some(LossParts {
            total: tuple_term,
            tuple: Some(tuple_value),
            entity: None,
        }));
    }
    let negative_entities: BTreeSet<usize> = negatives
        .iter()
        .flat_map(|&(k, _, l)| [k, l])
        .filter(|e| !gold_entities.contains(e))
        .collect();
    let (mut slots, mut offsets) = (Vec::new(), vec![0]);
    let (mut scored_labels, mut unscored_labels) = (Vec::new(), Vec::new());
    for (e, y) in gold_entities.iter().map(|&e| (e, true)).chain(negative_entities.iter().map(|&e| (e, false))) {
        let found = fwd.linking.mentions_of(e);
        if found.is_empty() {
            unscored_labels.push(y);
        } else {
            slots.extend(found.iter().map(|&(_, s)| s));
            offsets.push(slots.len());
            scored_labels.push(y);
        }
    }
    let scored = match (fwd.link, slots.is_empty()) {
        (Some(link), false) => {
            let p = tape.gather(link, &slots)?;
            Some(tape.segment_max(p, &offsets)?)
        }
        _ => None,
    };
    let (probs, labels) = assemble(tape, scored, scored_labels, unscored_labels)?;
    let entity_term = weighted_bce_tape(tape, probs, &labels, config.entity_weight, gold_entities.len() as f64)?;
    let entity_value = tape.value(entity_term).data()[0];
    let weighted = tape.scale(entity_term, config.alpha)?;
    let total = tape.add(tuple_term, weighted)?;
    Ok(Some(LossParts {
        total,
        tuple: Some(tuple_value),
        entity: Some(entity_value),
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean loss over documents with gold tuples.
    pub loss: f64,
    pub dev_f1: Option<f64>,
    pub dev_threshold: Option<f64>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub best_epoch: Option<usize>,
    pub best_dev_f1: Option<f64>,
    pub threshold: f64,
    pub stopped_early: bool,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn log_lines(&self) -> Vec<String> {
        self.epochs
            .iter()
            .map(|e| {
                let dev = match (e.dev_f1, e.dev_threshold) {
                    (Some(f), Some(t)) => format!(" dev_f1={f:.4} threshold={t:.2}"),
                    _ => String::new(),
                };
                format!("epoch={} loss={:.6}{dev} seconds={:.2}", e.epoch, e.loss, e.seconds)
            })
            .collect()
    }

    /// Machine-readable summary. Timings are left out so reruns compare equal.
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn tag_numerical(docs: &[String]) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Tensor(source) if source.is_numerical() => Error::Numerical {
            docs: docs.to_vec(),
            source,
        },
        other => other,
    }
}

/// Adam over one document per forward/backward pass, with gradients averaged over
/// `batch_size` documents per step. After each epoch the dev set, if any, picks a
/// threshold; the parameters and threshold of the best dev epoch are kept.
pub fn train(model: &mut Model, docs: &[TrainingDoc], dev: &DevSet, config: &LossConfig) -> Result<TrainReport> {
    config.validate()?;
    let started = Instant::now();
    let mut order_rng = streams::rng(config.seed, streams::DATA_ORDER);
    let mut dropout_rng = streams::rng(config.seed, streams::DROPOUT);
    let mut negative_rng = streams::rng(config.seed, streams::NEGATIVES);
    let mut adam = AdamState::new(&model.params, config.learning_rate);
    let mut report = TrainReport {
        threshold: model.threshold,
        ..TrainReport::default()
    };
    let mut best: Option<(f64, crate::ndtensor::ParamStore, f64)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..docs.len()).collect();

    for epoch in 1..=config.epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut order_rng);
        model.params.zero_grad();
        let mut batch: Vec<String> = Vec::new();
        let mut in_batch = 0usize;
        let (mut loss_sum, mut counted) = (0.0, 0usize);
        for (pos, &i) in order.iter().enumerate() {
            let doc = &docs[i];
            batch.push(doc.input.doc_id.clone());
            let negatives = sample_negative_tuples(
                &doc.input.candidate_entities(),
                &doc.gold,
                model.arch.num_relations,
                config.negatives,
                &mut negative_rng,
            );
            let grads = {
                let mut tape = Tape::new(&model.params);
                let parts = document_loss(&mut tape, &model.arch, doc, &negatives, config, Mode::Train, &mut dropout_rng)
                    .map_err(tag_numerical(&batch))?;
                match parts {
                    Some(p) => {
                        loss_sum += tape.value(p.total).data()[0];
                        counted += 1;
                        in_batch += 1;
                        Some(tape.backward(p.total).map_err(|e| tag_numerical(&batch)(e.into()))?)
                    }
                    None => None,
                }
            };
            if let Some(g) = grads {
                model.params.accumulate(&g);
            }
            let last = pos + 1 == order.len();
            if in_batch == config.batch_size || (last && in_batch > 0) {
                model.params.scale_grads(1.0 / in_batch as f64);
                adam.step(&mut model.params).map_err(|e| tag_numerical(&batch)(e.into()))?;
                model.params.zero_grad();
                in_batch = 0;
                batch.clear();
            }
        }
        let loss = if counted == 0 { 0.0 } else { loss_sum / counted as f64 };
        let mut epoch_report = EpochReport {
            epoch,
            loss,
            dev_f1: None,
            dev_threshold: None,
            seconds: 0.0,
        };
        let mut stop = false;
        if !dev.is_empty() {
            let scored = score_documents(model, &dev.inputs)?;
            let (threshold, metrics) = tune_threshold(&scored, &dev.gold)?;
            epoch_report.dev_f1 = Some(metrics.f1);
            epoch_report.dev_threshold = Some(threshold);
            if best.as_ref().is_none_or(|b| metrics.f1 > b.0) {
                best = Some((metrics.f1, model.params.clone(), threshold));
                report.best_epoch = Some(epoch);
                report.best_dev_f1 = Some(metrics.f1);
                since_best = 0;
            } else {
                since_best += 1;
                stop = since_best >= config.patience;
            }
        }
        epoch_report.seconds = epoch_start.elapsed().as_secs_f64();
        report.epochs.push(epoch_report);
        if let Some(line) = report.log_lines().last() {
            log::info!("{line}");
        }
        if stop {
            report.stopped_early = true;
            break;
        }
    }
    if let Some((_, params, threshold)) = best {
        model.params = params;
        model.threshold = threshold;
    }
    report.threshold = model.threshold;
    report.wall_seconds = started.elapsed().as_secs_f64();
    log::info!("training finished in {:.1}s", report.wall_seconds);
    Ok(report)
}
