use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use docgraph::Config;

use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "docgraph", version, about = "Joint entity linking and relation extraction from document-level tuples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with split manifests and gold links.
    Synth(SynthArgs),
    /// Build the character/word n-gram candidate index over the knowledge base.
    Index(IndexArgs),
    /// Retrieve candidates for every mention and report recall@k.
    Candidates(CandidatesArgs),
    /// Drop annotations whose entities no mention can reach.
    Filter(FilterArgs),
    /// Train the joint model.
    Train(TrainArgs),
    /// Write thresholded tuple predictions for a split.
    Predict(PredictArgs),
    /// Micro precision, recall and F1 of a prediction file.
    Eval(EvalArgs),
    /// Fraction of gold tuples reachable under several linking policies.
    Oracle(OracleArgs),
    /// Train and evaluate the hard-link pipeline baseline.
    Baseline(BaselineArgs),
    /// Document-level entity-set linking report.
    Linkeval(LinkevalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Directory with documents.tsv, mentions.tsv, kb.tsv, annotations.tsv and *.ids manifests.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Annotation file used instead of the corpus one, e.g. the output of `filter`.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
}

/// Config file plus per-key overrides.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// TOML config; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Candidates per mention seen by the model.
    #[arg(long)]
    pub model_candidates: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub tuple_weight: Option<f64>,
    #[arg(long)]
    pub entity_weight: Option<f64>,
    #[arg(long)]
    pub vocab_min_count: Option<usize>,
    #[arg(long)]
    pub keep_input: Option<f64>,
    #[arg(long)]
    pub keep_attention: Option<f64>,
    #[arg(long)]
    pub keep_word: Option<f64>,
    #[arg(long)]
    pub keep_hidden: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Config, Failure> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { config.$field = v; })*
            };
        }
        apply!(
            seed,
            embed_dim,
            blocks,
            heads,
            epochs,
            learning_rate,
            batch_size,
            alpha,
            negatives,
            top_k,
            patience,
            tuple_weight,
            entity_weight,
            vocab_min_count,
            keep_input,
            keep_attention,
            keep_word,
            keep_hidden
        );
        if let Some(c) = self.model_candidates {
            config.candidates = c;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub docs: usize,
    /// True entities; each also gets a decoy.
    #[arg(long, default_value_t = 10)]
    pub entities: usize,
    #[arg(long, default_value_t = 3)]
    pub relations: usize,
    /// Probability that a mention uses its short, decoy-matching form.
    #[arg(long, default_value_t = 0.0)]
    pub ambiguity: f64,
    #[arg(long, default_value_t = 2)]
    pub max_tuples: usize,
    #[arg(long, default_value_t = 2)]
    pub max_distractors: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dev_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CandidatesArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Index file written by `index`.
    #[arg(long)]
    pub index: PathBuf,
    /// Candidates kept per mention.
    #[arg(long, default_value_t = 25)]
    pub top: usize,
    /// Gold mention links for recall@k; defaults to gold_links.tsv in the corpus directory.
    #[arg(long)]
    pub gold_links: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, default_value_t = 25)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub candidates: PathBuf,
    /// Entity vectors: `entity_id<TAB>desc|graph<TAB>space-separated floats`.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Overrides the threshold stored in the model.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Candidate depths reported besides top-1 and all.
    #[arg(long, value_delimiter = ',', default_values_t = [5, 25])]
    pub top: Vec<usize>,
    /// External linker output (`doc_id, mention_index, entity_id`).
    #[arg(long)]
    pub links: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub candidates: PathBuf,
    /// External linker output; defaults to each mention's top candidate.
    #[arg(long)]
    pub links: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LinkevalArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Minimum document-level linking probability for the joint model.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// External linker output, reported as an extra row.
    #[arg(long)]
    pub links: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
