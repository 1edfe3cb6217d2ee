use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How token states are reduced to one embedding per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// The state at position 0.
    #[default]
    Cls,
    /// Mask-weighted mean over non-padding positions.
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cls" => Ok(Pooling::Cls),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::invalid(format!("unknown pooling '{other}' (cls | mean)"))),
        }
    }
}

fn default_eps() -> f32 {
    1e-12
}
fn default_pad() -> u32 {
    0
}
fn default_cls() -> u32 {
    1
}
fn default_sep() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    /// Number of learned positions.
    pub max_seq_len: usize,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(default = "crate::encoder::config::default_true")]
    pub normalize_embeddings: bool,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f32,
    #[serde(default = "default_pad")]
    pub pad_id: u32,
    #[serde(default = "default_cls")]
    pub cls_id: u32,
    #[serde(default = "default_sep")]
    pub sep_id: u32,
}

pub(crate) fn default_true() -> bool {
    true
}

/// First id the hashing tokenizer hands out; ids below it are reserved.
pub const FIRST_WORD_ID: u32 = 4;

impl EncoderConfig {
    /// Desk-scale model: 2 layers, hidden 32, 2 heads, ff 64, vocab 1024.
    pub fn tiny() -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 32,
            num_heads: 2,
            ff_dim: 64,
            vocab_size: 1024,
            max_seq_len: 128,
            pooling: Pooling::Cls,
            normalize_embeddings: true,
            layer_norm_eps: default_eps(),
            pad_id: default_pad(),
            cls_id: default_cls(),
            sep_id: default_sep(),
        }
    }

    /// BERT-base dimensions: 12 layers, hidden 768, 12 heads, ff 3072.
    pub fn base() -> Self {
        Self {
            num_layers: 12,
            hidden_dim: 768,
            num_heads: 12,
            ff_dim: 3072,
            vocab_size: 30522,
            max_seq_len: 512,
            ..Self::tiny()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "base" => Ok(Self::base()),
            other => Err(Error::invalid(format!("unknown preset '{other}' (tiny | base)"))),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.hidden_dim == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(Error::invalid(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::invalid("max_seq_len must leave room for CLS and SEP"));
        }
        if self.vocab_size < FIRST_WORD_ID as usize + 1 {
            return Err(Error::invalid(format!(
                "vocab_size must exceed the {FIRST_WORD_ID} reserved ids"
            )));
        }
        if self.ff_dim == 0 {
            return Err(Error::invalid("ff_dim must be positive"));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::invalid("layer_norm_eps must be positive"));
        }
        for (what, id) in [("pad", self.pad_id), ("cls", self.cls_id), ("sep", self.sep_id)] {
            if id as usize >= self.vocab_size {
                return Err(Error::invalid(format!("{what}_id {id} outside vocabulary")));
            }
        }
        Ok(())
    }
}
