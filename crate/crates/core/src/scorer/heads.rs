use rand::Rng;

use super::linking::LinkingMatrix;
use super::{DESC_PROJECTION, DESC_VECTORS, ENTITY_EMBEDDING, GRAPH_PROJECTION, GRAPH_VECTORS, SMAX_RHO, TYPE_EMBEDDING};
use crate::encoder::{encode, EncoderConfig, EMBEDDING_STD};
use crate::ndtensor::{glorot_uniform, normal_init, Mode, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// Everything about the model's shape that is not a parameter value.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub encoder: EncoderConfig,
    pub keep_hidden: f64,
    /// Type index of every entity, by entity index.
    pub entity_types: Vec<usize>,
    pub num_types: usize,
    pub num_relations: usize,
    pub desc_dim: Option<usize>,
    pub graph_dim: Option<usize>,
}

impl Architecture {
    pub fn num_entities(&self) -> usize {
        self.entity_types.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if !(self.keep_hidden > 0.0 && self.keep_hidden <= 1.0) {
            return Err(Error::Config(format!("keep_hidden {} outside (0, 1]", self.keep_hidden)));
        }
        if self.num_relations == 0 || self.num_types == 0 || self.entity_types.is_empty() {
            return Err(Error::Config("model needs at least one entity, type and relation".into()));
        }
        if let Some(t) = self.entity_types.iter().find(|&&t| t >= self.num_types) {
            return Err(Error::Config(format!("entity type index {t} out of range")));
        }
        Ok(())
    }
}

fn name(part: &str, p: &str) -> String {
    format!("scorer.{part}.{p}")
}

/// Adds the scorer's learned parameters. Pretrained vector tables are inserted separately.
pub fn init_scorer<R: Rng + ?Sized>(store: &mut ParamStore, arch: &Architecture, rng: &mut R) -> Result<()> {
    arch.validate()?;
    let n = arch.encoder.embed_dim;
    let r = arch.num_relations;
    store.insert(ENTITY_EMBEDDING, normal_init(&[arch.num_entities(), n], EMBEDDING_STD, rng))?;
    store.insert(TYPE_EMBEDDING, normal_init(&[arch.num_types, n], EMBEDDING_STD, rng))?;
    if let Some(d) = arch.desc_dim {
        store.insert(DESC_PROJECTION, glorot_uniform(&[d, n], d, n, rng))?;
    }
    if let Some(d) = arch.graph_dim {
        store.insert(GRAPH_PROJECTION, glorot_uniform(&[d, n], d, n, rng))?;
    }
    let mut dense = |store: &mut ParamStore, part: &str, layer: usize, fan_in: usize, fan_out: usize, bias: bool| {
        store.insert(name(part, &format!("w{layer}")), glorot_uniform(&[fan_in, fan_out], fan_in, fan_out, rng))?;
        if bias {
            store.insert(name(part, &format!("b{layer}")), Tensor::zeros(&[fan_out]))?;
        }
        Ok::<_, Error>(())
    };
    dense(store, "doc", 1, 2 * n, n, true)?;
    dense(store, "doc", 2, n, n, true)?;
    dense(store, "link", 1, 3 * n, n, true)?;
    // A bias on the linking output would cancel in the softmax.
    dense(store, "link", 2, n, 1, false)?;
    for part in ["head", "tail"] {
        dense(store, part, 1, n, n, true)?;
        dense(store, part, 2, n, n, true)?;
    }
    dense(store, "rel", 1, 2 * n, n, true)?;
    dense(store, "rel", 2, n, r, true)?;
    // softplus(ln(e - 1)) = 1
    store.insert(SMAX_RHO, Tensor::scalar((std::f64::consts::E - 1.0).ln()))?;
    Ok(())
}

fn mlp_layer(tape: &mut Tape, x: Var, part: &str, layer: usize) -> Result<Var> {
    let w = tape.param_named(&name(part, &format!("w{layer}")))?;
    let b = tape.param_named(&name(part, &format!("b{layer}")))?;
    Ok(tape.linear(x, w, Some(b))?)
}

/// `W2 ReLU(W1 [mean(h); max(h)] + b1) + b2` over the token rows of `encoding`.
pub fn doc_representation(tape: &mut Tape, encoding: Var) -> Result<Var> {
    if tape.value(encoding).is_empty() {
        return Err(Error::Input("document representation of an empty encoding".into()));
    }
    let mean = tape.mean_over_axis(encoding, 0)?;
    let max = tape.max_over_axis(encoding, 0)?;
    let x = tape.concat_cols(&[mean, max])?;
    let h = mlp_layer(tape, x, "doc", 1)?;
    let h = tape.relu(h)?;
    mlp_layer(tape, h, "doc", 2)
}

/// Rows of `ê + t (+ P_d d + P_g g)` for the given entity indices.
pub fn entity_vectors(tape: &mut Tape, arch: &Architecture, entities: &[usize]) -> Result<Var> {
    if let Some(&e) = entities.iter().find(|&&e| e >= arch.num_entities()) {
        return Err(Error::UnknownEntity(format!("entity index {e}")));
    }
    let table = tape.param_named(ENTITY_EMBEDDING)?;
    let mut v = tape.gather_rows(table, entities)?;
    let types: Vec<usize> = entities.iter().map(|&e| arch.entity_types[e]).collect();
    let type_table = tape.param_named(TYPE_EMBEDDING)?;
    let t = tape.gather_rows(type_table, &types)?;
    v = tape.add(v, t)?;
    for (vectors, projection) in [(DESC_VECTORS, DESC_PROJECTION), (GRAPH_VECTORS, GRAPH_PROJECTION)] {
        let store = tape.store();
        let (Some(vid), Some(_)) = (store.id(vectors), store.id(projection)) else {
            continue;
        };
        // Pretrained vectors are inputs, not trained.
        let source = store.value(vid);
        let (_, d) = source.dims2();
        let mut rows = Vec::with_capacity(entities.len() * d);
        for &e in entities {
            rows.extend_from_slice(source.row(e));
        }
        let rows = tape.constant(Tensor::matrix(entities.len(), d, rows)?)?;
        let p = tape.param_named(projection)?;
        let projected = tape.matmul(rows, p)?;
        v = tape.add(v, projected)?;
    }
    Ok(v)
}

/// Flat linking probabilities in `layout` slot order, softmaxed within each mention's
/// candidates. `layout` must have at least one slot.
#[allow(clippy::too_many_arguments)]
pub fn linking_probabilities<R: Rng + ?Sized>(
    tape: &mut Tape,
    arch: &Architecture,
    encoding: Var,
    doc_rep: Var,
    mention_starts: &[usize],
    layout: &LinkingMatrix,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let slots = layout.num_slots();
    if slots == 0 {
        return Err(Error::Input("no mention has candidates".into()));
    }
    let n = arch.encoder.embed_dim;
    let entities = layout.slot_entities();
    let e = entity_vectors(tape, arch, &entities)?;
    let doc_row = tape.reshape(doc_rep, &[1, n])?;
    let d = tape.gather_rows(doc_row, &vec![0; slots])?;
    let token_rows: Vec<usize> = (0..layout.num_mentions())
        .flat_map(|m| std::iter::repeat_n(mention_starts[m], layout.candidates(m).len()))
        .collect();
    let h = tape.gather_rows(encoding, &token_rows)?;
    let x = tape.concat_cols(&[e, d, h])?;
    let hidden = mlp_layer(tape, x, "link", 1)?;
    let hidden = tape.relu(hidden)?;
    let hidden = tape.dropout(hidden, arch.keep_hidden, mode, rng)?;
    let w2 = tape.param_named(&name("link", "w2"))?;
    let scores = tape.matmul(hidden, w2)?;
    let scores = tape.reshape(scores, &[slots])?;
    Ok(tape.segment_softmax(scores, &layout.segment_offsets())?)
}

/// Index of the ordered pair `(i, j)`, `i != j`, among `m` mentions.
pub(crate) fn pair_row(i: usize, j: usize, m: usize) -> usize {
    i * (m - 1) + if j < i { j } else { j - 1 }
}

/// `σ(W2 ReLU(W1 [head(m_i); tail(m_j)] + b1) + b2)` for every ordered pair of distinct
/// mentions, shaped `[M (M - 1), R]`. Requires at least two mentions.
pub fn relation_probabilities<R: Rng + ?Sized>(
    tape: &mut Tape,
    arch: &Architecture,
    encoding: Var,
    mention_starts: &[usize],
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let m = mention_starts.len();
    if m < 2 {
        return Err(Error::Input(format!("relation scores need two mentions, got {m}")));
    }
    let x = tape.gather_rows(encoding, mention_starts)?;
    let mut ends = Vec::with_capacity(2);
    for part in ["head", "tail"] {
        let h = mlp_layer(tape, x, part, 1)?;
        let h = tape.relu(h)?;
        let h = mlp_layer(tape, h, part, 2)?;
        ends.push(tape.dropout(h, arch.keep_hidden, mode, rng)?);
    }
    let mut heads = Vec::with_capacity(m * (m - 1));
    let mut tails = Vec::with_capacity(m * (m - 1));
    for i in 0..m {
        for j in (0..m).filter(|&j| j != i) {
            heads.push(i);
            tails.push(j);
        }
    }
    let hp = tape.gather_rows(ends[0], &heads)?;
    let tp = tape.gather_rows(ends[1], &tails)?;
    let pairs = tape.concat_cols(&[hp, tp])?;
    let hidden = mlp_layer(tape, pairs, "rel", 1)?;
    let hidden = tape.relu(hidden)?;
    let hidden = tape.dropout(hidden, arch.keep_hidden, mode, rng)?;
    let scores = mlp_layer(tape, hidden, "rel", 2)?;
    Ok(tape.sigmoid(scores)?)
}

/// `τ = softplus(ρ)`.
pub fn temperature(tape: &mut Tape) -> Result<Var> {
    let rho = tape.param_named(SMAX_RHO)?;
    Ok(tape.softplus(rho)?)
}

/// Token ids, mention start tokens and per-mention candidate entity indices for one
/// document. With `hard_links` every mention has at most one candidate, taken as certain.
#[derive(Clone, Debug, PartialEq)]
pub struct DocInput {
    pub doc_id: String,
    pub tokens: Vec<usize>,
    pub mention_starts: Vec<usize>,
    pub candidates: Vec<Vec<usize>>,
    pub hard_links: bool,
}

impl DocInput {
    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        let bad = |msg: String| Err(Error::Input(format!("document {}: {msg}", self.doc_id)));
        if self.tokens.is_empty() {
            return bad("no tokens".into());
        }
        if self.mention_starts.len() != self.candidates.len() {
            return bad(format!(
                "{} mentions but {} candidate lists",
                self.mention_starts.len(),
                self.candidates.len()
            ));
        }
        if let Some(s) = self.mention_starts.iter().find(|&&s| s >= self.tokens.len()) {
            return bad(format!("mention start {s} beyond {} tokens", self.tokens.len()));
        }
        if let Some(&e) = self.candidates.iter().flatten().find(|&&e| e >= arch.num_entities()) {
            return Err(Error::UnknownEntity(format!("entity index {e}")));
        }
        if self.hard_links && self.candidates.iter().any(|c| c.len() > 1) {
            return bad("hard links allow one entity per mention".into());
        }
        Ok(())
    }

    /// Union of all candidates, ascending.
    pub fn candidate_entities(&self) -> Vec<usize> {
        let set: std::collections::BTreeSet<usize> = self.candidates.iter().flatten().copied().collect();
        set.into_iter().collect()
    }
}

/// Relation probabilities for ordered pairs of the mentions that have candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationTensor {
    mentions: Vec<usize>,
    num_relations: usize,
    values: Vec<f64>,
}

impl RelationTensor {
    pub fn new(mentions: Vec<usize>, num_relations: usize, values: Vec<f64>) -> Result<Self> {
        let m = mentions.len();
        let expected = if m < 2 { 0 } else { m * (m - 1) * num_relations };
        if values.len() != expected {
            return Err(Error::Input(format!("{} relation values, expected {expected}", values.len())));
        }
        Ok(Self {
            mentions,
            num_relations,
            values,
        })
    }

    pub fn mentions(&self) -> &[usize] {
        &self.mentions
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Flat index of `p(r | m_i, m_j)`; `None` for `i == j` or mentions without scores.
    pub fn index(&self, i: usize, j: usize, r: usize) -> Option<usize> {
        if i == j || r >= self.num_relations {
            return None;
        }
        let a = self.mentions.binary_search(&i).ok()?;
        let b = self.mentions.binary_search(&j).ok()?;
        Some(pair_row(a, b, self.mentions.len()) * self.num_relations + r)
    }

    pub fn get(&self, i: usize, j: usize, r: usize) -> Option<f64> {
        self.index(i, j, r).map(|k| self.values[k])
    }
}

/// Tape nodes and numeric snapshots of one document's forward pass.
#[derive(Clone, Debug)]
pub struct DocForward {
    pub encoding: Var,
    pub doc_rep: Var,
    /// Flat linking probabilities, absent when no mention has candidates.
    pub link: Option<Var>,
    /// Flat relation probabilities, absent with fewer than two linkable mentions.
    pub rel: Option<Var>,
    pub tau: Var,
    pub linking: LinkingMatrix,
    pub relations: RelationTensor,
}

/// Encoder plus every scorer head. Zero-candidate mentions are encoded but get neither
/// linking nor relation scores.
pub fn forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    arch: &Architecture,
    doc: &DocInput,
    mode: Mode,
    rng: &mut R,
) -> Result<DocForward> {
    doc.validate(arch)?;
    let encoding = encode(tape, &doc.tokens, &arch.encoder, mode, rng)?;
    let doc_rep = doc_representation(tape, encoding)?;
    let layout = LinkingMatrix::layout(doc.candidates.clone())?;
    let link = match (layout.num_slots(), doc.hard_links) {
        (0, _) => None,
        (s, true) => Some(tape.constant(Tensor::filled(&[s], 1.0))?),
        (_, false) => Some(linking_probabilities(
            tape,
            arch,
            encoding,
            doc_rep,
            &doc.mention_starts,
            &layout,
            mode,
            rng,
        )?),
    };
    let linking = match link {
        Some(v) => layout.with_values(tape.value(v).data().to_vec())?,
        None => layout,
    };
    let active = linking.active_mentions();
    let rel = if active.len() >= 2 {
        let starts: Vec<usize> = active.iter().map(|&m| doc.mention_starts[m]).collect();
        let probs = relation_probabilities(tape, arch, encoding, &starts, mode, rng)?;
        let total = tape.value(probs).len();
        Some(tape.reshape(probs, &[total])?)
    } else {
        None
    };
    let values = rel.map(|v| tape.value(v).data().to_vec()).unwrap_or_default();
    let relations = RelationTensor::new(active, arch.num_relations, values)?;
    let tau = temperature(tape)?;
    Ok(DocForward {
        encoding,
        doc_rep,
        link,
        rel,
        tau,
        linking,
        relations,
    })
}
