use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use docgraph::candidates::{candidate_recall_at_k, generate_candidates, CandidateIndex, CandidateTable};
use docgraph::corpus::{
    filter_annotations_by_candidates, generate_synthetic_corpus, load_annotations, load_corpus, load_kb, load_links,
    load_split, write_annotations, Corpus, CorpusPaths, LinkTable, SyntheticConfig, Vocabulary, DEFAULT_MAX_SEQ_LEN,
};
use docgraph::evaluator::{
    gold_entity_sets, gold_subset, joint_doc_entities, joint_inputs, linked_doc_entities, linking_doc_eval, micro_prf,
    oracle_recall, pipeline_inputs, render_json, render_table, score_documents, LinkPolicy, MetricReport, OracleReport,
};
use docgraph::scorer::{Model, PretrainedVectors};
use docgraph::trainer::{hard_training_docs, train as fit, training_docs, DevSet, LossConfig};
use docgraph::{Config, Error};

use crate::args::*;
use crate::files::{read_predictions, render_predictions};
use crate::manifest::RunManifest;
use crate::{io_error, Failure};

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(io_error(path))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("json serializes") + "\n"))
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Run(Error::Input(format!("missing input file {}", path.display()))))
    }
}

fn load(args: &CorpusArgs) -> Result<Corpus, Failure> {
    let mut corpus = load_corpus(&CorpusPaths::in_dir(&args.corpus), DEFAULT_MAX_SEQ_LEN)?;
    if let Some(path) = &args.annotations {
        corpus.annotations = load_annotations(path, &corpus.documents, &corpus.kb)?;
    }
    Ok(corpus)
}

fn split_ids(args: &CorpusArgs, split: Split) -> Result<Vec<String>, Failure> {
    Ok(load_split(&args.corpus.join(format!("{}.ids", split.name())))?)
}

fn corpus_inputs(args: &CorpusArgs) -> Vec<&Path> {
    let mut v = vec![args.corpus.as_path()];
    v.extend(args.annotations.as_deref());
    v
}

fn load_candidates(path: &Path) -> Result<CandidateTable, Failure> {
    require_file(path)?;
    Ok(CandidateTable::load(path)?)
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    require_file(path)?;
    Ok(Model::load(path)?)
}

fn report_rows(rows: &[(&str, &MetricReport)], out: &Path, stem: &str) -> Result<(), Failure> {
    let table = render_table(rows);
    print!("{table}");
    write_text(&out.join(format!("{stem}.txt")), &table)?;
    write_json(&out.join(format!("{stem}.json")), &render_json(rows))
}

pub fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let config = SyntheticConfig {
        docs: a.docs,
        entities: a.entities,
        relations: a.relations,
        ambiguity: a.ambiguity,
        max_tuples_per_doc: a.max_tuples,
        max_distractors_per_doc: a.max_distractors,
        dev_fraction: a.dev_fraction,
        test_fraction: a.test_fraction,
    };
    let synth = generate_synthetic_corpus(&config, a.seed)?;
    synth.write(&a.out)?;
    println!(
        "wrote {} documents ({} train, {} dev, {} test) to {}",
        synth.corpus.documents.len(),
        synth.splits.train.len(),
        synth.splits.dev.len(),
        synth.splits.test.len(),
        a.out.display()
    );
    RunManifest::new("synth", None, Some(a.seed), &[], &a.out)?.write()
}

pub fn index(a: &IndexArgs) -> Result<(), Failure> {
    let kb_path = a.corpus.join("kb.tsv");
    let kb = load_kb(&kb_path)?;
    let index = CandidateIndex::build(&kb)?;
    create_dir(&a.out)?;
    index.save(&a.out.join("index.json"))?;
    println!("indexed {} names of {} entities", index.num_names(), kb.len());
    RunManifest::new("index", None, None, &[&kb_path], &a.out)?.write()
}

pub fn candidates(a: &CandidatesArgs) -> Result<(), Failure> {
    if a.top == 0 {
        return Err(Failure::Usage("--top must be at least 1".into()));
    }
    let corpus = load(&a.corpus)?;
    require_file(&a.index)?;
    let index = CandidateIndex::load(&a.index)?;
    let table = generate_candidates(&index, &corpus, a.top)?;
    create_dir(&a.out)?;
    table.save(&a.out.join("candidates.tsv"))?;
    let gold_path = a.gold_links.clone().unwrap_or_else(|| a.corpus.corpus.join("gold_links.tsv"));
    let mut inputs = corpus_inputs(&a.corpus);
    inputs.push(&a.index);
    if gold_path.is_file() {
        let gold = load_links(&gold_path)?;
        let mut ks: BTreeSet<usize> = [1, 5, 10, 25].into_iter().filter(|&k| k <= a.top).collect();
        ks.insert(a.top);
        let mut recall = serde_json::Map::new();
        for k in ks {
            let r = candidate_recall_at_k(&table, &gold, k)?;
            println!("recall@{k}\t{r:.4}");
            recall.insert(format!("recall@{k}"), r.into());
        }
        write_json(&a.out.join("candidate_recall.json"), &recall.into())?;
    } else if a.gold_links.is_some() {
        require_file(&gold_path)?;
    }
    let manifest = RunManifest::new("candidates", None, None, &inputs, &a.out)?;
    manifest.write()
}

pub fn filter(a: &FilterArgs) -> Result<(), Failure> {
    let corpus = load(&a.corpus)?;
    let table = load_candidates(&a.candidates)?;
    let filtered = filter_annotations_by_candidates(&corpus.annotations, &table, a.top);
    create_dir(&a.out)?;
    write_annotations(&a.out.join("annotations.tsv"), filtered.values(), corpus.kb.relations())?;
    let count = |m: &BTreeMap<String, docgraph::corpus::AnnotationGraph>| m.values().map(|g| g.tuples.len()).sum::<usize>();
    println!("kept {} of {} tuples", count(&filtered), count(&corpus.annotations));
    let mut inputs = corpus_inputs(&a.corpus);
    inputs.push(&a.candidates);
    RunManifest::new("filter", None, None, &inputs, &a.out)?.write()
}

fn new_model(config: &Config, corpus: &Corpus, train_ids: &[String], pretrained: Option<&Path>) -> Result<Model, Failure> {
    let wanted: BTreeSet<&str> = train_ids.iter().map(String::as_str).collect();
    let vocab = Vocabulary::build(
        corpus.documents.iter().filter(|d| wanted.contains(d.doc_id.as_str())),
        config.vocab_min_count,
    );
    let vectors = pretrained.map(PretrainedVectors::load).transpose()?;
    Ok(Model::new(config, vocab, &corpus.kb, vectors.as_ref())?)
}

fn save_training(model: &Model, report: &docgraph::trainer::TrainReport, out: &Path) -> Result<(), Failure> {
    model.save(&out.join("model.ckpt"))?;
    write_text(&out.join("config.toml"), &model.config.to_toml())?;
    write_text(&out.join("train_report.json"), &(report.summary_json() + "\n"))
}

pub fn train(a: &TrainArgs) -> Result<(), Failure> {
    let config = a.config.resolve()?;
    let corpus = load(&a.corpus)?;
    let train_ids = split_ids(&a.corpus, Split::Train)?;
    let dev_ids = split_ids(&a.corpus, Split::Dev)?;
    let table = load_candidates(&a.candidates)?;
    let mut model = new_model(&config, &corpus, &train_ids, a.pretrained.as_deref())?;
    let docs = training_docs(&model, &corpus, &train_ids, &table, &corpus.annotations)?;
    let dev = DevSet::new(joint_inputs(&model, &corpus, &dev_ids, &table)?, &corpus.annotations);
    let report = fit(&mut model, &docs, &dev, &LossConfig::from(&config))?;
    create_dir(&a.out)?;
    save_training(&model, &report, &a.out)?;
    println!(
        "trained {} epochs; best dev F1 {} at threshold {:.2}",
        report.epochs.len(),
        report.best_dev_f1.map_or("n/a".into(), |f| format!("{f:.4}")),
        report.threshold
    );
    let mut inputs = corpus_inputs(&a.corpus);
    inputs.push(&a.candidates);
    inputs.extend(a.pretrained.as_deref());
    RunManifest::new("train", a.config.config.as_deref(), Some(config.seed), &inputs, &a.out)?.write()
}

pub fn predict(a: &PredictArgs) -> Result<(), Failure> {
    let model = load_model(&a.model)?;
    let corpus = load(&a.corpus)?;
    let ids = split_ids(&a.corpus, a.split)?;
    let table = load_candidates(&a.candidates)?;
    let threshold = a.threshold.unwrap_or(model.threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Failure::Usage(format!("--threshold {threshold} is outside [0, 1]")));
    }
    let scored = score_documents(&model, &joint_inputs(&model, &corpus, &ids, &table)?)?;
    create_dir(&a.out)?;
    let text = render_predictions(&scored, &model.relation_names, threshold);
    write_text(&a.out.join("predictions.tsv"), &text)?;
    println!("wrote {} predicted tuples for {} documents", text.lines().count(), ids.len());
    let mut inputs = corpus_inputs(&a.corpus);
    inputs.extend([a.candidates.as_path(), a.model.as_path()]);
    RunManifest::new("predict", None, Some(model.config.seed), &inputs, &a.out)?.write()
}

pub fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let corpus = load(&a.corpus)?;
    let ids = split_ids(&a.corpus, a.split)?;
    require_file(&a.predictions)?;
    let read = read_predictions(&a.predictions, &corpus.kb)?;
    let mut predicted: docgraph::evaluator::PredictedTuples = ids.iter().map(|d| (d.clone(), BTreeSet::new())).collect();
    for (doc, tuples) in read {
        match predicted.get_mut(&doc) {
            Some(slot) => *slot = tuples,
            None => {
                return Err(Failure::Run(Error::Input(format!(
                    "prediction for document {doc} outside the {} split",
                    a.split.name()
                ))))
            }
        }
    }
    let report = micro_prf(&predicted, &gold_subset(&corpus.annotations, &ids))?;
    create_dir(&a.out)?;
    report_rows(&[("model", &report)], &a.out, "metrics")?;
    let mut inputs = corpus_inputs(&a.corpus);
    inputs.push(&a.predictions);
    RunManifest::new("eval", None, None, &inputs, &a.out)?.write()
}

pub fn oracle(a: &OracleArgs) -> Result<(), Failure> {
    if a.top.contains(&0) {
        return Err(Failure::Usage("--top values must be at least 1".into()));
    }
    let corpus = load(&a.corpus)?;
    let ids = split_ids(&a.corpus, a.split)?;
    let table = load_candidates(&a.candidates)?;
    let external = a.links.as_deref().map(load_links).transpose()?;
    let gold = gold_subset(&corpus.annotations, &ids);
    let mut policies = vec![LinkPolicy::TopOne(&table)];
    policies.extend(a.top.iter().map(|&c| LinkPolicy::OracleTopC(&table, c)));
    policies.push(LinkPolicy::OracleTopC(&table, usize::MAX));
    policies.extend(external.as_ref().map(LinkPolicy::External));
    let report = OracleReport {
        entries: policies.iter().map(|p| oracle_recall(p, &gold)).collect(),
    };
    create_dir(&a.out)?;
    let text = report.table();
    print!("{text}");
    write_text(&a.out.join("oracle.txt"), &text)?;
    write_json(&a.out.join("oracle.json"), &report.json())?;
    let mut inputs = corpus_inputs(&a.corpus);
    inputs.push(&a.candidates);
    inputs.extend(a.links.as_deref());
    RunManifest::new("oracle", None, None, &inputs, &a.out)?.write()
}

pub fn baseline(a: &BaselineArgs) -> Result<(), Failure> {
    let config = a.config.resolve()?;
    let corpus = load(&a.corpus)?;
    let train_ids = split_ids(&a.corpus, Split::Train)?;
    let dev_ids = split_ids(&a.corpus, Split::Dev)?;
    let eval_ids = split_ids(&a.corpus, a.split)?;
    let table = load_candidates(&a.candidates)?;
    let links: LinkTable = match &a.links {
        Some(p) => load_links(p)?,
        None => Model::top_candidate_table(&table, &corpus.mentions),
    };
    let mut model = new_model(&config, &corpus, &train_ids, None)?;
    let docs = hard_training_docs(&model, &corpus, &train_ids, &links, &corpus.annotations)?;
    let dev = DevSet::new(pipeline_inputs(&model, &corpus, &dev_ids, &links)?, &corpus.annotations);
    let report = fit(&mut model, &docs, &dev, &LossConfig::from(&config))?;
    let scored = score_documents(&model, &pipeline_inputs(&model, &corpus, &eval_ids, &links)?)?;
    let predicted = docgraph::evaluator::threshold_predictions(&scored, model.threshold);
    let metrics = micro_prf(&predicted, &gold_subset(&corpus.annotations, &eval_ids))?;
    create_dir(&a.out)?;
    save_training(&model, &report, &a.out)?;
    write_text(
        &a.out.join("predictions.tsv"),
        &render_predictions(&scored, &model.relation_names, model.threshold),
    )?;
    report_rows(&[("baseline", &metrics)], &a.out, "metrics")?;
    let mut inputs = corpus_inputs(&a.corpus);
    inputs.push(&a.candidates);
    inputs.extend(a.links.as_deref());
    RunManifest::new("baseline", a.config.config.as_deref(), Some(config.seed), &inputs, &a.out)?.write()
}

pub fn linkeval(a: &LinkevalArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Failure::Usage(format!("--threshold {} is outside [0, 1]", a.threshold)));
    }
    let model = load_model(&a.model)?;
    let corpus = load(&a.corpus)?;
    let ids = split_ids(&a.corpus, a.split)?;
    let table = load_candidates(&a.candidates)?;
    let gold = gold_entity_sets(&gold_subset(&corpus.annotations, &ids));
    let joint: BTreeMap<String, BTreeSet<String>> = joint_inputs(&model, &corpus, &ids, &table)?
        .iter()
        .map(|input| Ok((input.doc_id.clone(), joint_doc_entities(&model, input, a.threshold)?)))
        .collect::<Result<_, Error>>()?;
    let top = linked_doc_entities(&Model::top_candidate_table(&table, &corpus.mentions), &ids);
    let joint_report = linking_doc_eval(&joint, &gold);
    let top_report = linking_doc_eval(&top, &gold);
    let external_report = match &a.links {
        Some(p) => Some(linking_doc_eval(&linked_doc_entities(&load_links(p)?, &ids), &gold)),
        None => None,
    };
    let mut rows = vec![("joint", &joint_report), ("top-1", &top_report)];
    if let Some(r) = &external_report {
        rows.push(("external", r));
    }
    create_dir(&a.out)?;
    report_rows(&rows, &a.out, "linking")?;
    let mut inputs = corpus_inputs(&a.corpus);
    inputs.extend([a.candidates.as_path(), a.model.as_path()]);
    inputs.extend(a.links.as_deref());
    RunManifest::new("linkeval", None, None, &inputs, &a.out)?.write()
}
