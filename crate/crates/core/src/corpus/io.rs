//! Tab-separated corpus files. Blank lines and lines starting with `#` are skipped, except
//! for the `#relations` and `#types` headers of the knowledge-base file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{
    tokenize, AnnotationGraph, Corpus, CorpusError, Document, Entity, KnowledgeBase, LinkTable,
    Mention, Tuple,
};

/// Input files of a corpus. Several mention files may be given; their mentions are unioned.
#[derive(Clone, Debug)]
pub struct CorpusPaths {
    pub documents: PathBuf,
    pub mentions: Vec<PathBuf>,
    pub kb: PathBuf,
    pub annotations: PathBuf,
}

impl CorpusPaths {
    /// The file names written by the synthetic generator, inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            documents: dir.join("documents.tsv"),
            mentions: vec![dir.join("mentions.tsv")],
            kb: dir.join("kb.tsv"),
            annotations: dir.join("annotations.tsv"),
        }
    }
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CorpusError> {
    fs::write(path, contents).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

/// Yields `(line_number, fields)` for every data line.
fn records<'a>(
    path: &'a Path,
    text: &'a str,
    arity: usize,
) -> impl Iterator<Item = Result<(usize, Vec<&'a str>), CorpusError>> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(move |(i, l)| {
            let fields: Vec<&str> = l.split('\t').collect();
            if fields.len() != arity {
                Err(parse_err(
                    path,
                    i + 1,
                    format!("expected {arity} tab-separated fields, found {}", fields.len()),
                ))
            } else {
                Ok((i + 1, fields))
            }
        })
}

fn parse_index(path: &Path, line: usize, field: &str, what: &str) -> Result<usize, CorpusError> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid {what} {field:?}")))
}

fn check_field(value: &str, what: &str) -> Result<(), CorpusError> {
    if value.contains(['\t', '\n', '\r']) {
        return Err(CorpusError::InvalidConfig(format!(
            "{what} {value:?} contains a tab or line break"
        )));
    }
    Ok(())
}

pub fn load_documents(path: &Path, max_len: usize) -> Result<Vec<Document>, CorpusError> {
    let text = read(path)?;
    let mut seen = BTreeSet::new();
    let mut docs = Vec::new();
    for rec in records(path, &text, 3) {
        let (line, f) = rec?;
        if !seen.insert(f[0].to_string()) {
            return Err(parse_err(path, line, format!("duplicate document id {:?}", f[0])));
        }
        let doc = tokenize(f[0], f[1], f[2], max_len)?;
        if doc.truncated {
            log::warn!("document {} truncated to {max_len} tokens", doc.doc_id);
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Loads mentions grouped per document, sorted and deduplicated. Mentions that fall past
/// the end of a truncated document are dropped with a warning.
pub fn load_mentions(
    paths: &[PathBuf],
    docs: &[Document],
) -> Result<BTreeMap<String, Vec<Mention>>, CorpusError> {
    let lengths: BTreeMap<&str, (usize, bool)> = docs
        .iter()
        .map(|d| (d.doc_id.as_str(), (d.len(), d.truncated)))
        .collect();
    let mut grouped: BTreeMap<String, BTreeSet<Mention>> =
        docs.iter().map(|d| (d.doc_id.clone(), BTreeSet::new())).collect();
    let mut dropped = 0usize;
    for path in paths {
        let text = read(path)?;
        for rec in records(path, &text, 5) {
            let (line, f) = rec?;
            let Some(&(len, truncated)) = lengths.get(f[0]) else {
                return Err(CorpusError::UnknownDocument {
                    doc_id: f[0].to_string(),
                    path: path.clone(),
                    line,
                });
            };
            let start = parse_index(path, line, f[1], "start token")?;
            let end = parse_index(path, line, f[2], "end token")?;
            if start > end {
                return Err(parse_err(path, line, format!("start {start} exceeds end {end}")));
            }
            if end >= len {
                if truncated {
                    dropped += 1;
                    continue;
                }
                return Err(parse_err(
                    path,
                    line,
                    format!("span {start}..={end} outside document of {len} tokens"),
                ));
            }
            grouped.get_mut(f[0]).expect("document exists").insert(Mention {
                doc_id: f[0].to_string(),
                start_token: start,
                end_token: end,
                surface: f[3].to_string(),
                source: f[4].to_string(),
            });
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} mentions beyond truncated documents");
    }
    Ok(grouped
        .into_iter()
        .map(|(doc, set)| {
            let mut v: Vec<Mention> = set.into_iter().collect();
            v.sort_by(|a, b| {
                (a.start_token, a.end_token, &a.source, &a.surface)
                    .cmp(&(b.start_token, b.end_token, &b.source, &b.surface))
            });
            (doc, v)
        })
        .collect())
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase, CorpusError> {
    let text = read(path)?;
    let mut relations = None;
    let mut types = None;
    for (i, l) in text.lines().enumerate() {
        let header = |l: &str| l.split('\t').skip(1).map(str::to_string).collect::<Vec<_>>();
        if l.starts_with("#relations\t") {
            relations = Some(header(l));
        } else if l.starts_with("#types\t") {
            types = Some(header(l));
        } else if !l.starts_with('#') && !l.trim().is_empty() && (relations.is_none() || types.is_none()) {
            return Err(parse_err(path, i + 1, "entity line before #relations and #types headers"));
        }
    }
    let (Some(relations), Some(types)) = (relations, types) else {
        return Err(parse_err(path, 1, "missing #relations or #types header"));
    };
    let mut kb = KnowledgeBase::new(types, relations)?;
    for rec in records(path, &text, 4) {
        let (line, f) = rec?;
        let type_id = kb
            .type_index(f[1])
            .ok_or_else(|| parse_err(path, line, format!("undeclared type {:?}", f[1])))?;
        let synonyms = f[3]
            .split('|')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        kb.add_entity(Entity {
            entity_id: f[0].to_string(),
            canonical_name: f[2].to_string(),
            synonyms,
            type_id,
        })
        .map_err(|e| parse_err(path, line, e.to_string()))?;
    }
    Ok(kb)
}

/// Every document gets a graph, empty when it has no annotation lines.
pub fn load_annotations(
    path: &Path,
    docs: &[Document],
    kb: &KnowledgeBase,
) -> Result<BTreeMap<String, AnnotationGraph>, CorpusError> {
    let text = read(path)?;
    let mut graphs: BTreeMap<String, AnnotationGraph> = docs
        .iter()
        .map(|d| (d.doc_id.clone(), AnnotationGraph::new(d.doc_id.clone())))
        .collect();
    for rec in records(path, &text, 4) {
        let (line, f) = rec?;
        let Some(graph) = graphs.get_mut(f[0]) else {
            return Err(CorpusError::UnknownDocument {
                doc_id: f[0].to_string(),
                path: path.to_path_buf(),
                line,
            });
        };
        for id in [f[1], f[3]] {
            if !kb.contains(id) {
                return Err(CorpusError::DanglingEntity {
                    id: id.to_string(),
                    path: path.to_path_buf(),
                    line,
                });
            }
        }
        let relation = kb
            .relation_index(f[2])
            .ok_or_else(|| parse_err(path, line, format!("undeclared relation {:?}", f[2])))?;
        graph.tuples.insert(Tuple::new(f[1], relation, f[3]));
    }
    Ok(graphs)
}

pub fn load_corpus(paths: &CorpusPaths, max_len: usize) -> Result<Corpus, CorpusError> {
    let documents = load_documents(&paths.documents, max_len)?;
    let mentions = load_mentions(&paths.mentions, &documents)?;
    let kb = load_kb(&paths.kb)?;
    let annotations = load_annotations(&paths.annotations, &documents, &kb)?;
    Ok(Corpus {
        documents,
        mentions,
        kb,
        annotations,
    })
}

pub fn load_split(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = read(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Reads `doc_id, mention_index, entity_id` lines.
pub fn load_links(path: &Path) -> Result<LinkTable, CorpusError> {
    let text = read(path)?;
    let mut table = LinkTable::new();
    for rec in records(path, &text, 3) {
        let (line, f) = rec?;
        let index = parse_index(path, line, f[1], "mention index")?;
        if table
            .entry(f[0].to_string())
            .or_default()
            .insert(index, f[2].to_string())
            .is_some()
        {
            return Err(parse_err(path, line, format!("mention {index} linked twice")));
        }
    }
    Ok(table)
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for d in docs {
        check_field(&d.doc_id, "document id")?;
        check_field(&d.title, "title")?;
        check_field(&d.abstract_text, "abstract")?;
        let _ = writeln!(out, "{}\t{}\t{}", d.doc_id, d.title, d.abstract_text);
    }
    write(path, &out)
}

pub fn write_mentions<'a>(
    path: &Path,
    mentions: impl IntoIterator<Item = &'a Mention>,
) -> Result<(), CorpusError> {
    let mut out = String::new();
    for m in mentions {
        check_field(&m.surface, "mention surface")?;
        check_field(&m.source, "mention source")?;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            m.doc_id, m.start_token, m.end_token, m.surface, m.source
        );
    }
    write(path, &out)
}

pub fn write_kb(path: &Path, kb: &KnowledgeBase) -> Result<(), CorpusError> {
    let mut out = format!("#relations\t{}\n#types\t{}\n", kb.relations().join("\t"), kb.types().join("\t"));
    for e in kb.entities() {
        for name in e.names() {
            check_field(name, "entity name")?;
            if name.contains('|') {
                return Err(CorpusError::InvalidConfig(format!("entity name {name:?} contains '|'")));
            }
        }
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            e.entity_id,
            kb.types()[e.type_id],
            e.canonical_name,
            e.synonyms.join("|")
        );
    }
    write(path, &out)
}

pub fn write_annotations<'a>(
    path: &Path,
    graphs: impl IntoIterator<Item = &'a AnnotationGraph>,
    relations: &[String],
) -> Result<(), CorpusError> {
    let mut out = String::new();
    for g in graphs {
        for t in &g.tuples {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", g.doc_id, t.head, relations[t.relation], t.tail);
        }
    }
    write(path, &out)
}

pub fn write_split(path: &Path, ids: &[String]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for id in ids {
        out.push_str(id);
        out.push('\n');
    }
    write(path, &out)
}

pub fn write_links(path: &Path, links: &LinkTable) -> Result<(), CorpusError> {
    let mut out = String::new();
    for (doc, per_mention) in links {
        for (index, entity) in per_mention {
            let _ = writeln!(out, "{doc}\t{index}\t{entity}");
        }
    }
    write(path, &out)
}
