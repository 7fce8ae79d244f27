//! Flat key-value configuration shared by the encoder, scorer and trainer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Error;

/// Every tunable. Missing keys take their default; unknown keys are rejected.
/// Dropout settings are keep probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,

    pub embed_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub max_positions: usize,
    pub keep_input: f64,
    pub keep_attention: f64,
    pub keep_word: f64,
    pub keep_hidden: f64,
    pub vocab_min_count: usize,

    /// Candidates per mention seen by the model.
    pub candidates: usize,

    pub tuple_weight: f64,
    pub entity_weight: f64,
    pub alpha: f64,
    pub negatives: usize,
    pub top_k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    /// Used until a dev set picks one.
    pub threshold: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 13,
            embed_dim: 128,
            blocks: 4,
            heads: 2,
            max_positions: 512,
            keep_input: 0.25,
            keep_attention: 0.25,
            keep_word: 0.2,
            keep_hidden: 0.15,
            vocab_min_count: 2,
            candidates: 25,
            tuple_weight: 5.0,
            entity_weight: 2.0,
            alpha: 0.1,
            negatives: 100,
            top_k: 15,
            epochs: 100,
            batch_size: 8,
            learning_rate: 0.001,
            patience: 10,
            threshold: 0.5,
        }
    }
}

fn keep_ok(p: f64) -> bool {
    p > 0.0 && p <= 1.0
}

impl Config {
    /// Small, dropout-free model for the synthetic corpora. The model sees three candidates per
    /// mention; with the full 25 the linking layer settles on a per-document entity prior
    /// before it learns to use the mention.
    pub fn synthetic() -> Self {
        Self {
            embed_dim: 32,
            blocks: 1,
            heads: 2,
            keep_input: 1.0,
            keep_attention: 1.0,
            keep_word: 1.0,
            keep_hidden: 1.0,
            vocab_min_count: 1,
            candidates: 3,
            batch_size: 1,
            epochs: 200,
            patience: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.embed_dim == 0 {
            return fail("embed_dim must be positive".into());
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return fail(format!("embed_dim {} is not divisible by heads {}", self.embed_dim, self.heads));
        }
        if self.blocks == 0 {
            return fail("blocks must be at least 1".into());
        }
        if self.max_positions == 0 {
            return fail("max_positions must be positive".into());
        }
        for (name, p) in [
            ("keep_input", self.keep_input),
            ("keep_attention", self.keep_attention),
            ("keep_word", self.keep_word),
            ("keep_hidden", self.keep_hidden),
        ] {
            if !keep_ok(p) {
                return fail(format!("{name} = {p} outside (0, 1]"));
            }
        }
        if self.candidates == 0 {
            return fail("candidates must be at least 1".into());
        }
        if !(self.tuple_weight > 0.0) || !(self.entity_weight >= 0.0) {
            return fail("tuple_weight must be positive and entity_weight non-negative".into());
        }
        if !(self.alpha >= 0.0) {
            return fail(format!("alpha = {} must be non-negative", self.alpha));
        }
        if self.negatives == 0 || self.top_k == 0 || self.batch_size == 0 {
            return fail("negatives, top_k and batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return fail(format!("threshold {} outside [0, 1]", self.threshold));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for c in [Config::default(), Config::synthetic()] {
            c.validate().unwrap();
            assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        }
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = Config::from_toml("embed_dim = 16\nheads = 4\n").unwrap();
        assert_eq!(c.embed_dim, 16);
        assert_eq!(c.top_k, 15);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::from_toml("blocks = 0").is_err());
        assert!(Config::from_toml("embed_dim = 10\nheads = 3").is_err());
        assert!(Config::from_toml("keep_input = 0.0").is_err());
        assert!(Config::from_toml("unknown_key = 1").is_err());
        assert!(Config::from_toml("alpha = -1.0").is_err());
    }
}
