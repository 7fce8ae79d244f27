use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::heads::{forward, init_scorer, Architecture, DocForward, DocInput};
use super::{DESC_VECTORS, GRAPH_VECTORS};
use crate::candidates::CandidateTable;
use crate::config::Config;
use crate::corpus::{Document, KnowledgeBase, LinkTable, Mention, Vocabulary};
use crate::encoder::{init_encoder, EncoderConfig};
use crate::ndtensor::{AdamState, Checkpoint, Mode, ParamStore, Tape, Tensor};
use crate::{streams, Error, Result};

const FORMAT: &str = "docgraph-model";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum VectorKind {
    Desc,
    Graph,
}

impl VectorKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "desc" => Some(Self::Desc),
            "graph" => Some(Self::Graph),
            _ => None,
        }
    }
}

/// Optional per-entity description and graph vectors. Each kind has one fixed dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainedVectors {
    vectors: BTreeMap<(VectorKind, String), Vec<f64>>,
    dims: BTreeMap<VectorKind, usize>,
}

impl PretrainedVectors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entity_id: &str, kind: VectorKind, vector: Vec<f64>) -> Result<()> {
        if vector.is_empty() || vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("{entity_id}: empty or non-finite vector")));
        }
        let dim = *self.dims.entry(kind).or_insert(vector.len());
        if dim != vector.len() {
            return Err(Error::Input(format!(
                "{entity_id}: {kind:?} vector has {} values, expected {dim}",
                vector.len()
            )));
        }
        self.vectors.insert((kind, entity_id.to_string()), vector);
        Ok(())
    }

    pub fn dim(&self, kind: VectorKind) -> Option<usize> {
        self.dims.get(&kind).copied()
    }

    pub fn get(&self, entity_id: &str, kind: VectorKind) -> Option<&[f64]> {
        self.vectors.get(&(kind, entity_id.to_string())).map(Vec::as_slice)
    }

    /// Reads `entity_id<TAB>desc|graph<TAB>space-separated values` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut out = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Input(format!("{}:{}: {msg}", path.display(), i + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, kind, values] = fields[..] else {
                return Err(bad("expected 3 tab-separated fields"));
            };
            let kind = VectorKind::parse(kind).ok_or_else(|| bad("kind must be desc or graph"))?;
            let values = values
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(&e.to_string()))?;
            out.insert(id, kind, values).map_err(|e| bad(&e.to_string()))?;
        }
        Ok(out)
    }

    /// Table with one row per entity id; entities without a vector get a zero row.
    fn table(&self, kind: VectorKind, entity_ids: &[String]) -> Option<Tensor> {
        let dim = self.dim(kind)?;
        let mut data = Vec::with_capacity(entity_ids.len() * dim);
        for id in entity_ids {
            match self.get(id, kind) {
                Some(v) => data.extend_from_slice(v),
                None => data.extend(std::iter::repeat_n(0.0, dim)),
            }
        }
        Some(Tensor::matrix(entity_ids.len(), dim, data).expect("rows sized by dim"))
    }
}

/// Parameters plus every lookup table needed to turn corpus records into model inputs.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: Config,
    pub arch: Architecture,
    pub params: ParamStore,
    pub vocab: Vocabulary,
    pub type_names: Vec<String>,
    pub relation_names: Vec<String>,
    pub threshold: f64,
    entity_ids: Vec<String>,
    entity_index: BTreeMap<String, usize>,
}

impl Model {
    /// Freshly initialized model over every entity in `kb`.
    pub fn new(config: &Config, vocab: Vocabulary, kb: &KnowledgeBase, pretrained: Option<&PretrainedVectors>) -> Result<Self> {
        config.validate()?;
        let entity_ids: Vec<String> = kb.entities().map(|e| e.entity_id.clone()).collect();
        let arch = Architecture {
            encoder: EncoderConfig::from(config),
            keep_hidden: config.keep_hidden,
            entity_types: kb.entities().map(|e| e.type_id).collect(),
            num_types: kb.types().len(),
            num_relations: kb.relations().len(),
            desc_dim: pretrained.and_then(|p| p.dim(VectorKind::Desc)),
            graph_dim: pretrained.and_then(|p| p.dim(VectorKind::Graph)),
        };
        let mut params = ParamStore::new();
        let mut rng = streams::rng(config.seed, streams::INIT);
        init_encoder(&mut params, &arch.encoder, vocab.len(), &mut rng)?;
        init_scorer(&mut params, &arch, &mut rng)?;
        if let Some(p) = pretrained {
            for (kind, name) in [(VectorKind::Desc, DESC_VECTORS), (VectorKind::Graph, GRAPH_VECTORS)] {
                if let Some(table) = p.table(kind, &entity_ids) {
                    params.insert(name, table)?;
                }
            }
        }
        Ok(Self::assemble(
            config.clone(),
            arch,
            params,
            vocab,
            kb.types().to_vec(),
            kb.relations().to_vec(),
            config.threshold,
            entity_ids,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: Config,
        arch: Architecture,
        params: ParamStore,
        vocab: Vocabulary,
        type_names: Vec<String>,
        relation_names: Vec<String>,
        threshold: f64,
        entity_ids: Vec<String>,
    ) -> Self {
        let entity_index = entity_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self {
            config,
            arch,
            params,
            vocab,
            type_names,
            relation_names,
            threshold,
            entity_ids,
            entity_index,
        }
    }

    pub fn entity_ids(&self) -> &[String] {
        &self.entity_ids
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.entity_index.get(id).copied()
    }

    pub fn entity_id(&self, index: usize) -> &str {
        &self.entity_ids[index]
    }

    fn resolve(&self, id: &str) -> Result<usize> {
        self.entity_index(id).ok_or_else(|| Error::UnknownEntity(id.to_string()))
    }

    /// Inputs with each mention's top `config.candidates` retrieved candidates.
    pub fn doc_input(&self, doc: &Document, mentions: &[Mention], candidates: &CandidateTable) -> Result<DocInput> {
        let lists = (0..mentions.len())
            .map(|m| {
                candidates
                    .get(&doc.doc_id, m)
                    .iter()
                    .take(self.config.candidates)
                    .map(|c| self.resolve(&c.entity_id))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.input_with(doc, mentions, lists, false))
    }

    /// Inputs where each mention is fixed to one entity; unlinked mentions get none.
    pub fn hard_doc_input(&self, doc: &Document, mentions: &[Mention], links: &BTreeMap<usize, String>) -> Result<DocInput> {
        let lists = (0..mentions.len())
            .map(|m| links.get(&m).map(|id| self.resolve(id).map(|e| vec![e])).unwrap_or(Ok(Vec::new())))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.input_with(doc, mentions, lists, true))
    }

    fn input_with(&self, doc: &Document, mentions: &[Mention], candidates: Vec<Vec<usize>>, hard_links: bool) -> DocInput {
        DocInput {
            doc_id: doc.doc_id.clone(),
            tokens: self.vocab.encode(doc),
            mention_starts: mentions.iter().map(|m| m.start_token).collect(),
            candidates,
            hard_links,
        }
    }

    /// Deterministic evaluation-mode forward pass.
    pub fn forward_eval<'s>(&'s self, tape: &mut Tape<'s>, doc: &DocInput) -> Result<DocForward> {
        // Evaluation mode draws no random numbers.
        let mut rng = streams::rng(0, streams::DROPOUT);
        forward(tape, &self.arch, doc, Mode::Eval, &mut rng)
    }

    /// Training-mode forward pass with dropout drawn from `rng`.
    pub fn forward_train<'s, R: Rng + ?Sized>(&'s self, tape: &mut Tape<'s>, doc: &DocInput, rng: &mut R) -> Result<DocForward> {
        forward(tape, &self.arch, doc, Mode::Train, rng)
    }

    pub fn to_checkpoint(&self, adam: Option<AdamState>) -> Checkpoint {
        let entities: Vec<(&str, usize)> = self
            .entity_ids
            .iter()
            .zip(&self.arch.entity_types)
            .map(|(id, &t)| (id.as_str(), t))
            .collect();
        let metadata = BTreeMap::from([
            ("format".to_string(), FORMAT.to_string()),
            ("config".to_string(), self.config.to_toml()),
            ("vocab".to_string(), json(&self.vocab.tokens())),
            ("vocab_min_count".to_string(), self.vocab.min_count().to_string()),
            ("entities".to_string(), json(&entities)),
            ("types".to_string(), json(&self.type_names)),
            ("relations".to_string(), json(&self.relation_names)),
            ("threshold".to_string(), json(&self.threshold)),
        ]);
        Checkpoint {
            metadata,
            params: self.params.clone(),
            adam,
        }
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        let meta = &checkpoint.metadata;
        let field = |key: &str| {
            meta.get(key)
                .ok_or_else(|| Error::Input(format!("checkpoint metadata lacks {key:?}")))
        };
        if field("format")? != FORMAT {
            return Err(Error::Input("checkpoint is not a docgraph model".into()));
        }
        fn parse<T: serde::de::DeserializeOwned>(key: &str, s: &str) -> Result<T> {
            serde_json::from_str(s).map_err(|e| Error::Input(format!("checkpoint metadata {key:?}: {e}")))
        }
        let config = Config::from_toml(field("config")?)?;
        let min_count: usize = field("vocab_min_count")?
            .parse()
            .map_err(|_| Error::Input("checkpoint metadata \"vocab_min_count\" is not an integer".into()))?;
        let vocab = Vocabulary::from_tokens(parse("vocab", field("vocab")?)?, min_count);
        let entities: Vec<(String, usize)> = parse("entities", field("entities")?)?;
        let type_names: Vec<String> = parse("types", field("types")?)?;
        let relation_names: Vec<String> = parse("relations", field("relations")?)?;
        let threshold: f64 = parse("threshold", field("threshold")?)?;
        let params = checkpoint.params;
        let dim_of = |name: &str| params.id(name).map(|id| params.value(id).dims2().1);
        let arch = Architecture {
            encoder: EncoderConfig::from(&config),
            keep_hidden: config.keep_hidden,
            entity_types: entities.iter().map(|e| e.1).collect(),
            num_types: type_names.len(),
            num_relations: relation_names.len(),
            desc_dim: dim_of(DESC_VECTORS),
            graph_dim: dim_of(GRAPH_VECTORS),
        };
        arch.validate()?;
        let entity_ids = entities.into_iter().map(|e| e.0).collect();
        Ok(Self::assemble(
            config,
            arch,
            params,
            vocab,
            type_names,
            relation_names,
            threshold,
            entity_ids,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_checkpoint(None).save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    /// Link table giving each mention its rank-1 candidate, if any.
    pub fn top_candidate_links(candidates: &CandidateTable, doc_id: &str, num_mentions: usize) -> BTreeMap<usize, String> {
        (0..num_mentions)
            .filter_map(|m| candidates.get(doc_id, m).first().map(|c| (m, c.entity_id.clone())))
            .collect()
    }

    /// Every document's rank-1 links.
    pub fn top_candidate_table(candidates: &CandidateTable, mentions: &BTreeMap<String, Vec<Mention>>) -> LinkTable {
        mentions
            .iter()
            .map(|(doc, ms)| (doc.clone(), Self::top_candidate_links(candidates, doc, ms.len())))
            .collect()
    }
}

fn json<T: serde::Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string(value).expect("metadata serializes")
}
