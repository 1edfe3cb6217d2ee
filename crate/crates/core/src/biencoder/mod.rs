//! Tied and untied bi-encoders and their contrastive training.
//!
//! Training runs a separate, differentiable copy of the encoder forward pass
//! (see [`autodiff`]) with a hand-written reverse pass. Updates are plain SGD
//! with linear learning-rate decay; when the weights carry a frozen sparsity
//! profile, every pruned position is reset to exactly zero after each step.

pub(crate) mod autodiff;
mod gradcheck;
mod loss;
mod train;

pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport, TensorCheck};
pub use loss::{cosine_distance_loss, inbatch_softmax_loss};
pub use train::{train, train_step, TrainOutcome, Trainer};

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiedMode {
    Tied,
    Untied,
}

impl FromStr for TiedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tied" => Ok(TiedMode::Tied),
            "untied" => Ok(TiedMode::Untied),
            other => Err(Error::invalid(format!("unknown mode '{other}' (tied|untied)"))),
        }
    }
}

/// One encoder for both roles, or one per role.
#[derive(Debug, Clone, PartialEq)]
pub enum BiEncoder {
    Tied(EncoderWeights),
    Untied { query: EncoderWeights, doc: EncoderWeights },
}

impl BiEncoder {
    pub fn tied(weights: EncoderWeights) -> Self {
        BiEncoder::Tied(weights)
    }

    pub fn untied(query: EncoderWeights, doc: EncoderWeights) -> Result<Self> {
        if query.config != doc.config {
            return Err(Error::invalid("untied encoders must share one config"));
        }
        Ok(BiEncoder::Untied { query, doc })
    }

    /// Builds from a single starting checkpoint; untied mode copies it.
    pub fn from_weights(weights: EncoderWeights, mode: TiedMode) -> Self {
        match mode {
            TiedMode::Tied => BiEncoder::Tied(weights),
            TiedMode::Untied => BiEncoder::Untied {
                query: weights.clone(),
                doc: weights,
            },
        }
    }

    pub fn mode(&self) -> TiedMode {
        match self {
            BiEncoder::Tied(_) => TiedMode::Tied,
            BiEncoder::Untied { .. } => TiedMode::Untied,
        }
    }

    pub fn query_encoder(&self) -> &EncoderWeights {
        match self {
            BiEncoder::Tied(w) => w,
            BiEncoder::Untied { query, .. } => query,
        }
    }

    pub fn doc_encoder(&self) -> &EncoderWeights {
        match self {
            BiEncoder::Tied(w) => w,
            BiEncoder::Untied { doc, .. } => doc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `1 − cos(q, d⁺)` averaged over the batch. Ignores negatives.
    CosinePair,
    /// Cross-entropy of the positive among every document in the batch.
    #[default]
    InBatchSoftmax,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cosine_pair" | "cosine" => Ok(LossKind::CosinePair),
            "inbatch_softmax" | "in_batch_softmax" | "softmax" => Ok(LossKind::InBatchSoftmax),
            other => Err(Error::invalid(format!(
                "unknown loss '{other}' (cosine-pair|inbatch-softmax)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    /// Decays linearly from the initial rate to zero over all steps.
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f32,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub negatives_per_query: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub query_max_len: usize,
    pub doc_max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            learning_rate: 7e-5,
            schedule: LrSchedule::Linear,
            batch_size: 8,
            negatives_per_query: 1,
            seed: 0,
            loss_kind: LossKind::InBatchSoftmax,
            query_max_len: 32,
            doc_max_len: 128,
        }
    }
}

impl TrainConfig {
    pub const EPOCH_GRID: [usize; 2] = [3, 40];
    pub const LR_GRID: [f32; 4] = [1e-5, 5e-5, 7e-5, 9e-5];
    pub const BATCH_GRID: [usize; 2] = [8, 128];
    pub const NEGATIVES_GRID: [usize; 2] = [1, 8];

    /// True when every hyperparameter is one of the published sweep values.
    pub fn on_documented_grid(&self) -> bool {
        Self::EPOCH_GRID.contains(&self.epochs)
            && Self::LR_GRID.contains(&self.learning_rate)
            && Self::BATCH_GRID.contains(&self.batch_size)
            && Self::NEGATIVES_GRID.contains(&self.negatives_per_query)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if self.query_max_len < 2 || self.doc_max_len < 2 {
            return Err(Error::invalid("max lengths must leave room for [CLS] and [SEP]"));
        }
        Ok(())
    }
}

/// One training triple. Extra negatives beyond `negatives_per_query` are
/// ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainExample {
    pub query: String,
    pub positive: String,
    #[serde(default)]
    pub negatives: Vec<String>,
}
