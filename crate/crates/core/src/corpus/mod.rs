//! Documents, mentions, the knowledge base and document-level tuple annotations.

mod filter;
mod io;
mod synthetic;
mod tokenize;
mod vocab;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

pub use filter::filter_annotations_by_candidates;
pub use io::{
    load_annotations, load_corpus, load_documents, load_kb, load_links, load_mentions, load_split,
    write_annotations, write_documents, write_kb, write_links, write_mentions, write_split,
    CorpusPaths,
};
pub use synthetic::{generate_synthetic_corpus, SyntheticConfig, SyntheticCorpus};
pub use tokenize::{is_punctuation, tokenize, DEFAULT_MAX_SEQ_LEN, TITLE_SEPARATOR};
pub use vocab::{Vocabulary, DEFAULT_MIN_COUNT, UNK_TOKEN};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("document {0:?} has an empty title and an empty abstract")]
    EmptyDocument(String),
    #[error("unknown entity {id:?} referenced at {path}:{line}")]
    DanglingEntity { id: String, path: PathBuf, line: usize },
    #[error("unknown document {doc_id:?} referenced at {path}:{line}")]
    UnknownDocument {
        doc_id: String,
        path: PathBuf,
        line: usize,
    },
    #[error("invalid knowledge base: {0}")]
    InvalidKb(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    /// Character (not byte) offsets into [`Document::text`].
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub abstract_text: String,
    pub tokens: Vec<Token>,
    /// Set when tokens beyond the maximum sequence length were dropped.
    pub truncated: bool,
}

impl Document {
    /// The source text the token spans index into.
    pub fn text(&self) -> String {
        format!("{}{}{}", self.title, TITLE_SEPARATOR, self.abstract_text)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A token span produced by an external tagger. `end_token` is inclusive.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Mention {
    pub doc_id: String,
    pub start_token: usize,
    pub end_token: usize,
    pub surface: String,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entity {
    pub entity_id: String,
    pub canonical_name: String,
    pub synonyms: Vec<String>,
    pub type_id: usize,
}

impl Entity {
    /// Canonical name followed by synonyms.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    entities: BTreeMap<String, Entity>,
    types: Vec<String>,
    relations: Vec<String>,
}

impl KnowledgeBase {
    pub fn new(types: Vec<String>, relations: Vec<String>) -> Result<Self, CorpusError> {
        if relations.is_empty() {
            return Err(CorpusError::InvalidKb("at least one relation is required".into()));
        }
        if types.is_empty() {
            return Err(CorpusError::InvalidKb("at least one entity type is required".into()));
        }
        for (what, names) in [("relation", &relations), ("type", &types)] {
            let unique: BTreeSet<_> = names.iter().collect();
            if unique.len() != names.len() {
                return Err(CorpusError::InvalidKb(format!("duplicate {what} names")));
            }
        }
        Ok(Self {
            entities: BTreeMap::new(),
            types,
            relations,
        })
    }

    pub fn add_entity(&mut self, entity: Entity) -> Result<(), CorpusError> {
        if entity.type_id >= self.types.len() {
            return Err(CorpusError::InvalidKb(format!(
                "entity {:?} has type id {} but only {} types are declared",
                entity.entity_id,
                entity.type_id,
                self.types.len()
            )));
        }
        if self.entities.contains_key(&entity.entity_id) {
            return Err(CorpusError::InvalidKb(format!("duplicate entity id {:?}", entity.entity_id)));
        }
        self.entities.insert(entity.entity_id.clone(), entity);
        Ok(())
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entities.contains_key(id)
    }

    /// Entities in ascending id order.
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t == name)
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == name)
    }
}

/// An ordered (head, relation, tail) triple.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tuple {
    pub head: String,
    pub relation: usize,
    pub tail: String,
}

impl Tuple {
    pub fn new(head: impl Into<String>, relation: usize, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation,
            tail: tail.into(),
        }
    }
}

/// Document-level gold tuples. The entity set is always derived from the tuples.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnnotationGraph {
    pub doc_id: String,
    pub tuples: BTreeSet<Tuple>,
}

impl AnnotationGraph {
    pub fn new(doc_id: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            tuples: BTreeSet::new(),
        }
    }

    pub fn entity_set(&self) -> BTreeSet<String> {
        self.tuples
            .iter()
            .flat_map(|t| [t.head.clone(), t.tail.clone()])
            .collect()
    }

    pub fn contains(&self, tuple: &Tuple) -> bool {
        self.tuples.contains(tuple)
    }
}

/// Per-document mention-level links: `doc_id → mention_index → entity_id`. Used both for
/// gold links on evaluation corpora and for external-linker input.
pub type LinkTable = BTreeMap<String, BTreeMap<usize, String>>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// A loaded corpus. Mentions are grouped per document, sorted by span and deduplicated;
/// the position within a document's list is its mention index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub mentions: BTreeMap<String, Vec<Mention>>,
    pub kb: KnowledgeBase,
    pub annotations: BTreeMap<String, AnnotationGraph>,
}

impl Corpus {
    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    pub fn mentions_of(&self, doc_id: &str) -> &[Mention] {
        self.mentions.get(doc_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn annotation(&self, doc_id: &str) -> Option<&AnnotationGraph> {
        self.annotations.get(doc_id)
    }

    pub fn num_mentions(&self) -> usize {
        self.mentions.values().map(Vec::len).sum()
    }
}
