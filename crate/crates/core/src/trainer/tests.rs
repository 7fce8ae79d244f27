use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::candidates::{generate_candidates, CandidateIndex};
use crate::corpus::{generate_synthetic_corpus, SyntheticConfig, Vocabulary};
use crate::ndtensor::gradcheck::check_params;
use crate::ndtensor::{Mode, Tape};
use crate::scorer::tests::{as_tensor_error, tiny_config, tiny_kb, tiny_model, tiny_vocab};
use crate::scorer::{doc_entity_probability, pool_document, DocInput, Model, PretrainedVectors, TupleIndex, VectorKind};
use crate::Config;

fn no_dropout() -> Config {
    Config {
        keep_input: 1.0,
        keep_attention: 1.0,
        keep_word: 1.0,
        keep_hidden: 1.0,
        top_k: 100,
        ..tiny_config()
    }
}

fn fixture_doc() -> TrainingDoc {
    TrainingDoc {
        input: DocInput {
            doc_id: "t".into(),
            tokens: vec![1, 4, 2, 7, 3, 5],
            mention_starts: vec![0, 2, 4, 5],
            candidates: vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![]],
            hard_links: false,
        },
        gold: [(0, 0, 2), (1, 1, 3)].into(),
    }
}

/// Tuple and entity terms recomputed from the numeric forward pass.
fn oracle_terms(model: &Model, doc: &TrainingDoc, negatives: &BTreeSet<TupleIndex>, cfg: &LossConfig) -> (f64, f64) {
    let mut tape = Tape::new(&model.params);
    let fwd = model.forward_eval(&mut tape, &doc.input).unwrap();
    let tau = tape.value(fwd.tau).data()[0];
    let lk = &fwd.linking;
    let tuple_prob = |&(k, r, l): &TupleIndex| -> f64 {
        let mut pairs = Vec::new();
        for (i, _) in lk.mentions_of(k) {
            for (j, _) in lk.mentions_of(l) {
                if let Some(rel) = fwd.relations.get(i, j, r) {
                    pairs.push(lk.probability(i, k).unwrap() * lk.probability(j, l).unwrap() * rel);
                }
            }
        }
        pool_document(&pairs, tau).unwrap().unwrap_or(0.0)
    };
    let items: Vec<TupleIndex> = doc.gold.iter().chain(negatives).copied().collect();
    let probs: Vec<f64> = items.iter().map(tuple_prob).collect();
    let labels: Vec<bool> = items.iter().map(|t| doc.gold.contains(t)).collect();
    let tuple = tuple_loss(&probs, &labels, cfg.tuple_weight).unwrap().unwrap();

    let gold_e = doc.gold_entities();
    let neg_e: BTreeSet<usize> = negatives.iter().flat_map(|&(k, _, l)| [k, l]).filter(|e| !gold_e.contains(e)).collect();
    let ents: Vec<usize> = gold_e.iter().chain(&neg_e).copied().collect();
    let probs: Vec<f64> = ents
        .iter()
        .map(|&e| {
            let (p, found) = doc_entity_probability(lk, e);
            if found {
                p
            } else {
                0.0
            }
        })
        .collect();
    let labels: Vec<bool> = ents.iter().map(|e| gold_e.contains(e)).collect();
    let entity = entity_loss(&probs, &labels, cfg.entity_weight).unwrap().unwrap();
    (tuple, entity)
}

#[test]
fn loss_matches_numeric_oracle() {
    let config = Config { alpha: 0.7, ..no_dropout() };
    let model = tiny_model(&config, 5, 2);
    let cfg = LossConfig::from(&config);
    let doc = fixture_doc();
    let negatives: BTreeSet<TupleIndex> = [(0, 1, 1), (2, 0, 3), (4, 0, 0), (3, 1, 2)].into();
    let mut tape = Tape::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let parts = document_loss(&mut tape, &model.arch, &doc, &negatives, &cfg, Mode::Eval, &mut rng)
        .unwrap()
        .unwrap();
    let (tuple, entity) = oracle_terms(&model, &doc, &negatives, &cfg);
    assert!((parts.tuple.unwrap() - tuple).abs() < 1e-12, "{parts:?} vs {tuple}");
    assert!((parts.entity.unwrap() - entity).abs() < 1e-12, "{parts:?} vs {entity}");
    assert!((tape.value(parts.total).data()[0] - (tuple + 0.7 * entity)).abs() < 1e-12);
}

#[test]
fn alpha_zero_drops_the_entity_term() {
    let config = Config { alpha: 0.0, ..no_dropout() };
    let model = tiny_model(&config, 5, 2);
    let cfg = LossConfig::from(&config);
    let doc = fixture_doc();
    let negatives: BTreeSet<TupleIndex> = [(0, 1, 1), (2, 0, 3)].into();
    let mut tape = Tape::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let parts = document_loss(&mut tape, &model.arch, &doc, &negatives, &cfg, Mode::Eval, &mut rng)
        .unwrap()
        .unwrap();
    assert_eq!(parts.entity, None);
    assert_eq!(tape.value(parts.total).data()[0], parts.tuple.unwrap());
    // The gradient is affine in alpha, so 2 g(1) - g(2) isolates the tuple term on every
    // parameter; with alpha = 0 that is all that remains.
    let g0 = tape.backward(parts.total).unwrap();
    let grads_at = |alpha: f64| {
        let cfg = LossConfig { alpha, ..cfg.clone() };
        let mut tape = Tape::new(&model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let parts = document_loss(&mut tape, &model.arch, &doc, &negatives, &cfg, Mode::Eval, &mut rng)
            .unwrap()
            .unwrap();
        assert!(parts.entity.is_some());
        tape.backward(parts.total).unwrap()
    };
    let (g1, g2) = (grads_at(1.0), grads_at(2.0));
    let mut entity_reaches = 0;
    for (id, p) in model.params.iter() {
        let (a, b, c) = (g0.param(id), g1.param(id), g2.param(id));
        for ((&x, &y), &z) in a.data().iter().zip(b.data()).zip(c.data()) {
            let tuple_only = 2.0 * y - z;
            assert!((x - tuple_only).abs() <= 1e-10 * (1.0 + x.abs()), "{}: {x} vs {tuple_only}", p.name());
            if y != z {
                entity_reaches += 1;
            }
        }
    }
    assert!(entity_reaches > 0);
}

#[test]
fn documents_without_gold_are_skipped() {
    let config = no_dropout();
    let model = tiny_model(&config, 4, 1);
    let mut doc = fixture_doc();
    doc.gold.clear();
    let mut tape = Tape::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = document_loss(&mut tape, &model.arch, &doc, &[(0, 0, 1)].into(), &LossConfig::from(&config), Mode::Eval, &mut rng);
    assert!(out.unwrap().is_none());
}

#[test]
fn unreachable_gold_costs_but_stays_finite() {
    let config = Config { alpha: 1.0, ..no_dropout() };
    let model = tiny_model(&config, 6, 1);
    let mut doc = fixture_doc();
    // Entity 5 is nobody's candidate.
    doc.gold = [(0, 0, 5)].into();
    let mut tape = Tape::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let parts = document_loss(&mut tape, &model.arch, &doc, &BTreeSet::new(), &LossConfig::from(&config), Mode::Eval, &mut rng)
        .unwrap()
        .unwrap();
    let expected = -config.tuple_weight * EPS.ln();
    assert!((parts.tuple.unwrap() - expected).abs() < 1e-9);
    assert!(tape.value(parts.total).data()[0].is_finite());
    assert!(tape.backward(parts.total).is_ok());
}

#[test]
fn full_objective_gradcheck() {
    let config = Config {
        alpha: 0.5,
        max_positions: 8,
        ..no_dropout()
    };
    let mut pretrained = PretrainedVectors::new();
    pretrained.insert("E1", VectorKind::Desc, vec![0.2, -0.4]).unwrap();
    let model = Model::new(&config, tiny_vocab(), &tiny_kb(4, 2), Some(&pretrained)).unwrap();
    let cfg = LossConfig { top_k: 2, ..LossConfig::from(&config) };
    let doc = fixture_doc();
    let negatives: BTreeSet<TupleIndex> = [(0, 1, 1), (2, 0, 3), (3, 1, 0)].into();
    let report = check_params(&model.params, 1e-5, |name| !name.starts_with("pretrained."), |tape| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let parts = document_loss(tape, &model.arch, &doc, &negatives, &cfg, Mode::Eval, &mut rng).map_err(as_tensor_error)?;
        Ok(parts.expect("has gold").total)
    })
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

fn synthetic_setup(seed: u64, config: &Config) -> (Model, Vec<TrainingDoc>, DevSet) {
    let synth = generate_synthetic_corpus(
        &SyntheticConfig {
            docs: 30,
            ..SyntheticConfig::default()
        },
        seed,
    )
    .unwrap();
    let vocab = Vocabulary::build(&synth.corpus.documents, 1);
    let index = CandidateIndex::build(&synth.corpus.kb).unwrap();
    let table = generate_candidates(&index, &synth.corpus, config.candidates).unwrap();
    let model = Model::new(config, vocab, &synth.corpus.kb, None).unwrap();
    let gold = &synth.corpus.annotations;
    let train_docs = training_docs(&model, &synth.corpus, &synth.splits.train, &table, gold).unwrap();
    let dev_inputs = crate::evaluator::joint_inputs(&model, &synth.corpus, &synth.splits.dev, &table).unwrap();
    (model, train_docs, DevSet::new(dev_inputs, gold))
}

fn small_training_config(epochs: usize) -> Config {
    Config {
        embed_dim: 16,
        blocks: 1,
        heads: 2,
        vocab_min_count: 1,
        epochs,
        negatives: 20,
        learning_rate: 0.005,
        ..Config::default()
    }
}

#[test]
fn training_is_deterministic() {
    let config = small_training_config(2);
    let run = || {
        let (mut model, docs, dev) = synthetic_setup(4, &config);
        let report = train(&mut model, &docs, &dev, &LossConfig::from(&config)).unwrap();
        (model.params, report.summary_json())
    };
    let (p1, s1) = run();
    let (p2, s2) = run();
    assert_eq!(s1, s2);
    for ((_, a), (_, b)) in p1.iter().zip(p2.iter()) {
        assert_eq!(a.value(), b.value(), "{}", a.name());
    }
}

#[test]
fn loss_decreases_on_unambiguous_corpus() {
    for seed in [1, 2, 3] {
        let config = Config {
            epochs: 5,
            seed,
            ..Config::synthetic()
        };
        let (mut model, docs, _) = synthetic_setup(1, &config);
        let report = train(&mut model, &docs, &DevSet::default(), &LossConfig::from(&config)).unwrap();
        let losses: Vec<f64> = report.epochs.iter().map(|e| e.loss).collect();
        assert_eq!(losses.len(), 5);
        for w in losses.windows(2) {
            assert!(w[1] <= 1.05 * w[0], "seed {seed}: {losses:?}");
        }
        assert!(losses[4] < losses[0], "seed {seed}: {losses:?}");
    }
}

#[test]
fn zero_epochs_and_pretrained_rows_stay_fixed() {
    let config = small_training_config(0);
    let (mut model, docs, dev) = synthetic_setup(2, &config);
    let before = model.params.clone();
    train(&mut model, &docs, &dev, &LossConfig::from(&config)).unwrap();
    for ((_, a), (_, b)) in before.iter().zip(model.params.iter()) {
        assert_eq!(a.value(), b.value());
    }

    let config = Config {
        epochs: 1,
        ..small_training_config(1)
    };
    let synth = generate_synthetic_corpus(&SyntheticConfig::default(), 2).unwrap();
    let mut pretrained = PretrainedVectors::new();
    for e in synth.corpus.kb.entities() {
        pretrained.insert(&e.entity_id, VectorKind::Graph, vec![0.5, -0.25, 1.0]).unwrap();
    }
    let vocab = Vocabulary::build(&synth.corpus.documents, 1);
    let index = CandidateIndex::build(&synth.corpus.kb).unwrap();
    let table = generate_candidates(&index, &synth.corpus, config.candidates).unwrap();
    let mut model = Model::new(&config, vocab, &synth.corpus.kb, Some(&pretrained)).unwrap();
    let docs = training_docs(&model, &synth.corpus, &synth.splits.train, &table, &synth.corpus.annotations).unwrap();
    let graph = |m: &Model| m.params.value(m.params.require(crate::scorer::GRAPH_VECTORS).unwrap()).clone();
    let projection = |m: &Model| m.params.value(m.params.require(crate::scorer::GRAPH_PROJECTION).unwrap()).clone();
    let (g0, p0) = (graph(&model), projection(&model));
    train(&mut model, &docs, &DevSet::default(), &LossConfig::from(&config)).unwrap();
    assert_eq!(graph(&model), g0);
    assert_ne!(projection(&model), p0);
}

#[test]
fn dev_selection_keeps_best_epoch() {
    let config = Config {
        patience: 1,
        ..small_training_config(4)
    };
    let (mut model, docs, dev) = synthetic_setup(3, &config);
    let report = train(&mut model, &docs, &dev, &LossConfig::from(&config)).unwrap();
    let best = report.best_epoch.unwrap();
    let f1s: Vec<f64> = report.epochs.iter().map(|e| e.dev_f1.unwrap()).collect();
    assert!(f1s.iter().all(|&f| f <= report.best_dev_f1.unwrap()));
    assert_eq!(report.threshold, report.epochs[best - 1].dev_threshold.unwrap());
    assert_eq!(model.threshold, report.threshold);
    if report.stopped_early {
        assert!(report.epochs.len() < 4);
    }
    assert!(!report.summary_json().contains("seconds"));
}

#[test]
fn invalid_loss_config_is_rejected() {
    let cfg = LossConfig {
        batch_size: 0,
        ..LossConfig::from(&Config::default())
    };
    assert!(cfg.validate().is_err());
    let mut model = tiny_model(&tiny_config(), 3, 1);
    assert!(train(&mut model, &[], &DevSet::default(), &cfg).is_err());
}
