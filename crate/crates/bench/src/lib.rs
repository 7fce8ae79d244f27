//! Shared fixtures for the benchmarks.

use docgraph::candidates::{generate_candidates, CandidateIndex, CandidateTable};
use docgraph::corpus::{generate_synthetic_corpus, Corpus, SyntheticConfig, Vocabulary};
use docgraph::scorer::{DocInput, Model};
use docgraph::trainer::{training_docs, TrainingDoc};
use docgraph::Config;

pub struct Fixture {
    pub corpus: Corpus,
    pub index: CandidateIndex,
    pub table: CandidateTable,
    pub model: Model,
    pub docs: Vec<TrainingDoc>,
}

impl Fixture {
    /// Synthetic corpus of `docs` documents and an untrained model over it.
    pub fn new(docs: usize, config: &Config) -> Self {
        let synth = generate_synthetic_corpus(
            &SyntheticConfig {
                docs,
                ambiguity: 0.4,
                ..SyntheticConfig::default()
            },
            1,
        )
        .expect("synthetic corpus");
        let corpus = synth.corpus;
        let index = CandidateIndex::build(&corpus.kb).expect("index");
        let table = generate_candidates(&index, &corpus, 25).expect("candidates");
        let vocab = Vocabulary::build(&corpus.documents, config.vocab_min_count);
        let model = Model::new(config, vocab, &corpus.kb, None).expect("model");
        let ids: Vec<String> = corpus.documents.iter().map(|d| d.doc_id.clone()).collect();
        let docs = training_docs(&model, &corpus, &ids, &table, &corpus.annotations).expect("training docs");
        Self { corpus, index, table, model, docs }
    }

    pub fn inputs(&self) -> Vec<&DocInput> {
        self.docs.iter().map(|d| &d.input).collect()
    }
}
