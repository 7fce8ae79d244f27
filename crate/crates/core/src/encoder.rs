//! Transformer text encoder: learned word and position embeddings followed by residual
//! blocks of multi-head attention, layer norm and convolutions.

use rand::Rng;

use crate::config::Config;
use crate::corpus::Vocabulary;
use crate::ndtensor::{glorot_uniform, normal_init, Mode, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

pub const WORD_EMBEDDING: &str = "encoder.word_embedding";
pub const POSITION_EMBEDDING: &str = "encoder.position_embedding";
pub const EMBEDDING_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub max_positions: usize,
    pub keep_input: f64,
    pub keep_attention: f64,
    pub keep_word: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::Config("blocks must be at least 1".into()));
        }
        if self.heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        for p in [self.keep_input, self.keep_attention, self.keep_word] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("keep probability {p} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

impl From<&Config> for EncoderConfig {
    fn from(c: &Config) -> Self {
        Self {
            embed_dim: c.embed_dim,
            blocks: c.blocks,
            heads: c.heads,
            max_positions: c.max_positions,
            keep_input: c.keep_input,
            keep_attention: c.keep_attention,
            keep_word: c.keep_word,
        }
    }
}

pub fn block_param(block: usize, name: &str) -> String {
    format!("encoder.block{block}.{name}")
}

/// Adds all encoder parameters to `store`.
pub fn init_encoder<R: Rng + ?Sized>(
    store: &mut ParamStore,
    config: &EncoderConfig,
    vocab_size: usize,
    rng: &mut R,
) -> Result<()> {
    config.validate()?;
    let n = config.embed_dim;
    store.insert(WORD_EMBEDDING, normal_init(&[vocab_size, n], EMBEDDING_STD, rng))?;
    store.insert(POSITION_EMBEDDING, normal_init(&[config.max_positions, n], EMBEDDING_STD, rng))?;
    for k in 0..config.blocks {
        for name in ["query", "key", "value"] {
            store.insert(block_param(k, name), glorot_uniform(&[n, n], n, n, rng))?;
        }
        store.insert(block_param(k, "norm_gain"), Tensor::filled(&[n], 1.0))?;
        store.insert(block_param(k, "norm_bias"), Tensor::zeros(&[n]))?;
        for (name, width) in [("conv1", 1), ("conv2", 1), ("conv5", 5)] {
            store.insert(
                block_param(k, &format!("{name}_weight")),
                glorot_uniform(&[width, n, n], width * n, width * n, rng),
            )?;
            store.insert(block_param(k, &format!("{name}_bias")), Tensor::zeros(&[n]))?;
        }
    }
    Ok(())
}

/// `s_i = word(x_i) + position(i)`. In train mode tokens are first replaced by UNK with
/// probability `1 - keep_word` and the sum is dropped out with `keep_input`.
pub fn embed<R: Rng + ?Sized>(
    tape: &mut Tape,
    token_ids: &[usize],
    config: &EncoderConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if token_ids.is_empty() {
        return Err(Error::Input("cannot encode an empty token sequence".into()));
    }
    if token_ids.len() > config.max_positions {
        return Err(Error::Input(format!(
            "sequence of {} tokens exceeds max_positions {}",
            token_ids.len(),
            config.max_positions
        )));
    }
    let ids: Vec<usize> = if mode == Mode::Train && config.keep_word < 1.0 {
        token_ids
            .iter()
            .map(|&t| if rng.random::<f64>() < config.keep_word { t } else { Vocabulary::UNK })
            .collect()
    } else {
        token_ids.to_vec()
    };
    let words = tape.param_named(WORD_EMBEDDING)?;
    let position_table = tape.param_named(POSITION_EMBEDDING)?;
    let w = tape.embedding_lookup(words, &ids)?;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let p = tape.embedding_lookup(position_table, &positions)?;
    let s = tape.add(w, p)?;
    Ok(tape.dropout(s, config.keep_input, mode, rng)?)
}

/// Output of one attention layer. `weights` holds the per-head attention matrices before
/// dropout.
pub struct Attention {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention with `heads` heads; head outputs are concatenated.
pub fn multi_head_attention<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    block: usize,
    config: &EncoderConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Attention> {
    let wq = tape.param_named(&block_param(block, "query"))?;
    let wk = tape.param_named(&block_param(block, "key"))?;
    let wv = tape.param_named(&block_param(block, "value"))?;
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let d = config.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut outputs = Vec::with_capacity(config.heads);
    let mut weights = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let qh = tape.slice_cols(q, h * d, (h + 1) * d)?;
        let kh = tape.slice_cols(k, h * d, (h + 1) * d)?;
        let vh = tape.slice_cols(v, h * d, (h + 1) * d)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let a = tape.softmax_over_axis(scores, 1)?;
        weights.push(a);
        let a = tape.dropout(a, config.keep_attention, mode, rng)?;
        outputs.push(tape.matmul(a, vh)?);
    }
    let output = if outputs.len() == 1 { outputs[0] } else { tape.concat_cols(&outputs)? };
    Ok(Attention { output, weights })
}

/// `b + transformer_k(b)`: attention, layer norm, width-1 conv, ReLU, width-1 conv,
/// width-5 conv.
pub fn transformer_block<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    block: usize,
    config: &EncoderConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let n = config.embed_dim;
    let shape = tape.shape(x);
    if shape.len() != 2 || shape[1] != n {
        return Err(Error::Input(format!("block input {shape:?} does not have {n} columns")));
    }
    let attention = multi_head_attention(tape, x, block, config, mode, rng)?;
    let gain = tape.param_named(&block_param(block, "norm_gain"))?;
    let bias = tape.param_named(&block_param(block, "norm_bias"))?;
    let mut h = tape.layer_norm(attention.output, gain, bias)?;
    for (i, name) in ["conv1", "conv2", "conv5"].into_iter().enumerate() {
        let w = tape.param_named(&block_param(block, &format!("{name}_weight")))?;
        let b = tape.param_named(&block_param(block, &format!("{name}_bias")))?;
        h = tape.conv1d(h, w, b)?;
        if i == 0 {
            h = tape.relu(h)?;
        }
    }
    Ok(tape.add(x, h)?)
}

/// Contextual token representations, one `n`-dimensional row per token.
pub fn encode<R: Rng + ?Sized>(
    tape: &mut Tape,
    token_ids: &[usize],
    config: &EncoderConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    config.validate()?;
    let mut h = embed(tape, token_ids, config, mode, rng)?;
    for k in 0..config.blocks {
        h = transformer_block(tape, h, k, config, mode, rng)?;
    }
    Ok(h)
}
