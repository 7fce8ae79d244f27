//! Seeded generator for small corpora with a controllable rate of ambiguous mentions.
//!
//! Every true entity has two pseudo-words `w1 w2` and a decoy of the same type named `w1`.
//! A mention is written as `w1 w2` or, with probability `ambiguity`, just `w1`. The short
//! form matches the decoy exactly, so string similarity ranks the decoy first.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{write_annotations, write_documents, write_kb, write_links, write_mentions, write_split, CorpusPaths};
use super::{
    tokenize, AnnotationGraph, Corpus, CorpusError, Entity, KnowledgeBase, LinkTable, Mention,
    Splits, Tuple, DEFAULT_MAX_SEQ_LEN,
};
use crate::candidates::normalize;

const TYPES: [&str; 2] = ["chemical", "disease"];
const RELATION_WORDS: [&str; 8] = [
    "induces", "treats", "inhibits", "prevents", "worsens", "mimics", "activates", "masks",
];
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aiou";
const SOURCE: &str = "synth";
const TEMPLATE_WORDS: [&str; 22] = [
    "effects", "of", "in", "patients", "and", "were", "also", "measured", "levels", "unchanged", "a",
    "case", "report", "we", "found", "that", "study", "this", "compound", "syndrome", "was", "given",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub docs: usize,
    /// True entities; each also gets a decoy, so the KB holds twice as many.
    pub entities: usize,
    pub relations: usize,
    /// Probability that a mention uses the short, decoy-matching surface form.
    pub ambiguity: f64,
    pub max_tuples_per_doc: usize,
    pub max_distractors_per_doc: usize,
    pub dev_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            docs: 20,
            entities: 10,
            relations: 3,
            ambiguity: 0.0,
            max_tuples_per_doc: 2,
            max_distractors_per_doc: 2,
            dev_fraction: 0.2,
            test_fraction: 0.2,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return bad(format!("ambiguity {} outside [0, 1]", self.ambiguity));
        }
        if self.docs == 0 {
            return bad("docs must be positive".into());
        }
        if self.relations == 0 {
            return bad("relations must be positive".into());
        }
        if self.max_tuples_per_doc == 0 {
            return bad("max_tuples_per_doc must be positive".into());
        }
        if self.entities / 2 < self.max_tuples_per_doc {
            return bad(format!(
                "{} entities cannot fill {} distinct tuples per document",
                self.entities, self.max_tuples_per_doc
            ));
        }
        for f in [self.dev_fraction, self.test_fraction] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("split fraction {f} outside [0, 1)"));
            }
        }
        if self.dev_fraction + self.test_fraction >= 1.0 {
            return bad("dev and test fractions leave no training documents".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub splits: Splits,
    pub gold_links: LinkTable,
}

impl SyntheticCorpus {
    /// Writes the corpus files, split manifests and `gold_links.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let paths = CorpusPaths::in_dir(dir);
        let c = &self.corpus;
        write_documents(&paths.documents, &c.documents)?;
        write_mentions(&paths.mentions[0], c.documents.iter().flat_map(|d| c.mentions_of(&d.doc_id)))?;
        write_kb(&paths.kb, &c.kb)?;
        write_annotations(
            &paths.annotations,
            c.documents.iter().filter_map(|d| c.annotation(&d.doc_id)),
            c.kb.relations(),
        )?;
        write_split(&dir.join("train.ids"), &self.splits.train)?;
        write_split(&dir.join("dev.ids"), &self.splits.dev)?;
        write_split(&dir.join("test.ids"), &self.splits.test)?;
        write_links(&dir.join("gold_links.tsv"), &self.gold_links)
    }
}

struct NameForms {
    full: String,
    short: String,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
        w.push(*VOWELS.choose(rng).expect("non-empty") as char);
    }
    w
}

/// Draws words that stay distinct from each other and from `reserved` after normalization.
fn fresh_word(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let w = pseudo_word(rng);
        if used.insert(normalize(&w)) {
            return w;
        }
    }
}

struct Sentence {
    words: Vec<String>,
    /// (word offset, word count, entity index into the true entity list)
    mentions: Vec<(usize, usize, usize)>,
}

impl Sentence {
    fn new() -> Self {
        Self {
            words: Vec::new(),
            mentions: Vec::new(),
        }
    }

    fn text(&mut self, s: &str) -> &mut Self {
        self.words.extend(s.split_whitespace().map(str::to_string));
        self
    }

    fn mention(&mut self, entity: usize, surface: &str) -> &mut Self {
        let start = self.words.len();
        self.text(surface);
        self.mentions.push((start, self.words.len() - start, entity));
        self
    }
}

pub fn generate_synthetic_corpus(config: &SyntheticConfig, seed: u64) -> Result<SyntheticCorpus, CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let relations: Vec<String> = (0..config.relations)
        .map(|r| match RELATION_WORDS.get(r) {
            Some(w) => w.to_string(),
            None => format!("relates{r}"),
        })
        .collect();
    let mut used: BTreeSet<String> = TEMPLATE_WORDS
        .iter()
        .copied()
        .chain(relations.iter().map(String::as_str))
        .map(normalize)
        .collect();

    let mut kb = KnowledgeBase::new(TYPES.iter().map(|t| t.to_string()).collect(), relations.clone())?;
    let chemicals = config.entities.div_ceil(2);
    let mut forms = Vec::with_capacity(config.entities);
    let mut ids = Vec::with_capacity(config.entities);
    let mut types = Vec::with_capacity(config.entities);
    for e in 0..config.entities {
        let type_id = usize::from(e >= chemicals);
        let w1 = fresh_word(&mut rng, &mut used);
        let w2 = fresh_word(&mut rng, &mut used);
        let w3 = fresh_word(&mut rng, &mut used);
        let suffix = if type_id == 0 { "compound" } else { "syndrome" };
        let id = format!("E{:04}", e + 1);
        kb.add_entity(Entity {
            entity_id: id.clone(),
            canonical_name: format!("{w1} {w2}"),
            synonyms: vec![format!("{w1} {w2} {suffix}")],
            type_id,
        })?;
        kb.add_entity(Entity {
            entity_id: format!("D{:04}", e + 1),
            canonical_name: w1.clone(),
            synonyms: vec![format!("{w1} {w3}")],
            type_id,
        })?;
        forms.push(NameForms {
            full: format!("{w1} {w2}"),
            short: w1,
        });
        ids.push(id);
        types.push(type_id);
    }
    let chem_ids: Vec<usize> = (0..config.entities).filter(|&e| types[e] == 0).collect();
    let dis_ids: Vec<usize> = (0..config.entities).filter(|&e| types[e] == 1).collect();

    let width = config.docs.to_string().len().max(3);
    let mut corpus = Corpus {
        kb,
        ..Corpus::default()
    };
    let mut gold_links = LinkTable::new();

    for d in 0..config.docs {
        let doc_id = format!("doc{:0width$}", d + 1);
        let n_tuples = rng.random_range(1..=config.max_tuples_per_doc);
        let heads: Vec<usize> = chem_ids.choose_multiple(&mut rng, n_tuples).copied().collect();
        let tails: Vec<usize> = dis_ids.choose_multiple(&mut rng, n_tuples).copied().collect();
        let mut rels: Vec<usize> = (0..config.relations).collect();
        rels.shuffle(&mut rng);
        let surface = |rng: &mut ChaCha8Rng, e: usize| {
            if rng.random_bool(config.ambiguity) {
                forms[e].short.clone()
            } else {
                forms[e].full.clone()
            }
        };

        let mut graph = AnnotationGraph::new(doc_id.clone());
        let mut sentences = Vec::new();
        for t in 0..n_tuples {
            let r = rels[t % rels.len()];
            let (h, tl) = (heads[t], tails[t]);
            graph.tuples.insert(Tuple::new(ids[h].clone(), r, ids[tl].clone()));
            let (sh, st) = (surface(&mut rng, h), surface(&mut rng, tl));
            let mut s = Sentence::new();
            match rng.random_range(0..3) {
                0 => s.mention(h, &sh).text(&relations[r]).mention(tl, &st).text("."),
                1 => s.text("we found that").mention(h, &sh).text(&relations[r]).mention(tl, &st).text("."),
                _ => s.text("in this study").mention(h, &sh).text(&relations[r]).mention(tl, &st).text("in patients ."),
            };
            sentences.push(s);
        }
        let in_doc: BTreeSet<usize> = heads.iter().chain(&tails).copied().collect();
        let others: Vec<usize> = (0..config.entities).filter(|e| !in_doc.contains(e)).collect();
        let n_distractors = rng.random_range(0..=config.max_distractors_per_doc).min(others.len());
        for &x in others.choose_multiple(&mut rng, n_distractors) {
            let sx = surface(&mut rng, x);
            let mut s = Sentence::new();
            if rng.random_bool(0.5) {
                s.mention(x, &sx).text("was also measured .");
            } else {
                s.text("levels of").mention(x, &sx).text("were unchanged .");
            }
            sentences.push(s);
        }
        sentences.shuffle(&mut rng);

        let mut title = Sentence::new();
        if rng.random_bool(0.5) {
            let h = heads[0];
            let sh = surface(&mut rng, h);
            title.text("effects of").mention(h, &sh);
        } else {
            title.text("a case report");
        }

        let mut words: Vec<String> = title.words.clone();
        let mut spans: Vec<(usize, usize, usize)> = title.mentions.clone();
        let mut body: Vec<String> = Vec::new();
        for s in &sentences {
            let offset = words.len() + body.len();
            spans.extend(s.mentions.iter().map(|&(start, len, e)| (offset + start, len, e)));
            body.extend(s.words.iter().cloned());
        }
        words.extend(body.iter().cloned());
        let doc = tokenize(&doc_id, &title.words.join(" "), &body.join(" "), DEFAULT_MAX_SEQ_LEN)?;
        debug_assert_eq!(doc.len(), words.len());

        let mut mentions = Vec::with_capacity(spans.len());
        let links = gold_links.entry(doc_id.clone()).or_default();
        for (i, &(start, len, e)) in spans.iter().enumerate() {
            mentions.push(Mention {
                doc_id: doc_id.clone(),
                start_token: start,
                end_token: start + len - 1,
                surface: words[start..start + len].join(" "),
                source: SOURCE.to_string(),
            });
            links.insert(i, ids[e].clone());
        }
        corpus.mentions.insert(doc_id.clone(), mentions);
        corpus.annotations.insert(doc_id.clone(), graph);
        corpus.documents.push(doc);
    }

    let ids: Vec<String> = corpus.documents.iter().map(|d| d.doc_id.clone()).collect();
    let n_dev = (config.docs as f64 * config.dev_fraction).round() as usize;
    let n_test = (config.docs as f64 * config.test_fraction).round() as usize;
    let n_train = config.docs.saturating_sub(n_dev + n_test);
    let splits = Splits {
        train: ids[..n_train].to_vec(),
        dev: ids[n_train..(n_train + n_dev).min(ids.len())].to_vec(),
        test: ids[(n_train + n_dev).min(ids.len())..].to_vec(),
    };
    Ok(SyntheticCorpus {
        corpus,
        splits,
        gold_links,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::{generate_candidates, CandidateIndex};
    use crate::corpus::load_corpus;
    use std::collections::BTreeMap;

    fn config(ambiguity: f64) -> SyntheticConfig {
        SyntheticConfig {
            ambiguity,
            ..SyntheticConfig::default()
        }
    }

    fn decoy_of(kb: &KnowledgeBase) -> BTreeMap<String, String> {
        kb.entities()
            .filter(|e| e.entity_id.starts_with('E'))
            .map(|e| (e.entity_id.clone(), format!("D{}", &e.entity_id[1..])))
            .collect()
    }

    fn top1_accuracy(synth: &SyntheticCorpus) -> (usize, usize) {
        let index = CandidateIndex::build(&synth.corpus.kb).unwrap();
        let table = generate_candidates(&index, &synth.corpus, 1).unwrap();
        let mut hits = 0;
        let mut total = 0;
        for (doc, links) in &synth.gold_links {
            for (&m, e) in links {
                total += 1;
                hits += usize::from(table.get(doc, m).first().is_some_and(|c| &c.entity_id == e));
            }
        }
        (hits, total)
    }

    #[test]
    fn zero_ambiguity_top_candidate_is_true_entity() {
        let synth = generate_synthetic_corpus(&config(0.0), 7).unwrap();
        let (hits, total) = top1_accuracy(&synth);
        assert!(total > 0);
        assert_eq!(hits, total);
    }

    #[test]
    fn full_ambiguity_top_candidate_is_decoy() {
        let synth = generate_synthetic_corpus(&config(1.0), 7).unwrap();
        let index = CandidateIndex::build(&synth.corpus.kb).unwrap();
        let table = generate_candidates(&index, &synth.corpus, 1).unwrap();
        let decoys = decoy_of(&synth.corpus.kb);
        for (doc, links) in &synth.gold_links {
            for (&m, e) in links {
                assert_eq!(table.get(doc, m)[0].entity_id, decoys[e]);
                assert!((table.get(doc, m)[0].score - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic_corpus(&config(0.3), 11).unwrap().write(a.path()).unwrap();
        generate_synthetic_corpus(&config(0.3), 11).unwrap().write(b.path()).unwrap();
        for name in ["documents.tsv", "mentions.tsv", "kb.tsv", "annotations.tsv", "train.ids", "gold_links.tsv"] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
        let c = tempfile::tempdir().unwrap();
        generate_synthetic_corpus(&config(0.3), 12).unwrap().write(c.path()).unwrap();
        assert_ne!(
            std::fs::read(a.path().join("documents.tsv")).unwrap(),
            std::fs::read(c.path().join("documents.tsv")).unwrap()
        );
    }

    #[test]
    fn tuples_are_expressible_and_files_reload() {
        let synth = generate_synthetic_corpus(&config(0.5), 3).unwrap();
        for (doc, graph) in &synth.corpus.annotations {
            let linked: BTreeSet<&String> = synth.gold_links[doc].values().collect();
            for e in graph.entity_set() {
                assert!(linked.contains(&e), "{doc}: {e} not mentioned");
            }
            for m in synth.corpus.mentions_of(doc) {
                let toks = &synth.corpus.document(doc).unwrap().tokens[m.start_token..=m.end_token];
                let joined: Vec<&str> = toks.iter().map(|t| t.surface.as_str()).collect();
                assert_eq!(joined.join(" "), m.surface);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        synth.write(dir.path()).unwrap();
        let loaded = load_corpus(&CorpusPaths::in_dir(dir.path()), DEFAULT_MAX_SEQ_LEN).unwrap();
        assert_eq!(loaded, synth.corpus);
        assert_eq!(synth.splits.train.len() + synth.splits.dev.len() + synth.splits.test.len(), 20);
    }

    #[test]
    fn ambiguity_out_of_range_rejected() {
        assert!(matches!(
            generate_synthetic_corpus(&config(1.5), 1),
            Err(CorpusError::InvalidConfig(_))
        ));
        assert!(generate_synthetic_corpus(&config(-0.1), 1).is_err());
    }

    #[test]
    fn top1_accuracy_tracks_ambiguity() {
        let cfg = SyntheticConfig {
            docs: 400,
            entities: 30,
            ambiguity: 0.4,
            ..SyntheticConfig::default()
        };
        let synth = generate_synthetic_corpus(&cfg, 5).unwrap();
        let (hits, total) = top1_accuracy(&synth);
        assert!(total >= 1000, "{total}");
        let acc = hits as f64 / total as f64;
        assert!((acc - 0.6).abs() < 0.05, "accuracy {acc}");
    }
}
