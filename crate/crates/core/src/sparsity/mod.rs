//! Sparsity profiles: create masks by magnitude, freeze them into the
//! weights, audit achieved sparsity, and compress frozen layers to CSR/BSR.
//!
//! A frozen profile is the contract for sparse transfer: once frozen, the
//! zero pattern of every profiled matrix must survive any later training
//! unchanged.

mod compress;
mod prune;
mod stats;

pub use compress::{compress, decompress};
pub use prune::{apply_and_freeze, block_magnitude_prune, kept_count, magnitude_prune, prune_encoder};
pub use stats::{sparsity_stats, LayerStats, SparsityReport};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::kernels::{BlockShape, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SparsityPattern {
    Unstructured,
    Block { block: BlockShape },
}

impl SparsityPattern {
    pub fn label(&self) -> String {
        match self {
            SparsityPattern::Unstructured => "unstructured".into(),
            SparsityPattern::Block { block } => format!("block({block})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub layer: String,
    pub target_sparsity: f64,
    pub pattern: SparsityPattern,
}

/// Per-matrix sparsity targets and patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityProfile {
    layers: Vec<LayerProfile>,
    frozen: bool,
}

impl SparsityProfile {
    pub fn new(layers: Vec<LayerProfile>) -> Result<Self> {
        for l in &layers {
            check_fraction(l.target_sparsity)?;
        }
        Ok(Self {
            layers,
            frozen: false,
        })
    }

    pub fn layers(&self) -> &[LayerProfile] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerProfile> {
        self.layers.iter().find(|l| l.layer == name)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// Adds or replaces a layer entry. Frozen profiles refuse.
    pub fn set_layer(&mut self, entry: LayerProfile) -> Result<()> {
        if self.frozen {
            return Err(Error::invalid("sparsity profile is frozen"));
        }
        check_fraction(entry.target_sparsity)?;
        match self.layers.iter_mut().find(|l| l.layer == entry.layer) {
            Some(slot) => *slot = entry,
            None => self.layers.push(entry),
        }
        Ok(())
    }
}

pub(crate) fn check_fraction(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::invalid(format!("sparsity {s} outside [0, 1]")));
    }
    Ok(())
}

/// Binary keep-mask for one matrix (`true` = weight survives).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixMask {
    pub rows: usize,
    pub cols: usize,
    pub keep: Vec<bool>,
}

impl MatrixMask {
    pub fn all_ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    /// `1 - kept / total`.
    pub fn sparsity(&self) -> f64 {
        if self.keep.is_empty() {
            return 0.0;
        }
        1.0 - self.kept() as f64 / self.keep.len() as f64
    }

    /// `m ⊙ mask`.
    pub fn apply(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        if m.shape() != (self.rows, self.cols) {
            return Err(Error::dims(
                "MatrixMask::apply",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", m.rows(), m.cols()),
            ));
        }
        let values = m
            .values()
            .iter()
            .zip(&self.keep)
            .map(|(v, k)| if *k { *v } else { 0.0 })
            .collect();
        DenseMatrix::new(self.rows, self.cols, values)
    }
}

/// Mask for one named encoder matrix plus the profile entry that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMask {
    pub name: String,
    pub target_sparsity: f64,
    pub pattern: SparsityPattern,
    pub mask: MatrixMask,
}

/// Per-layer masks for an encoder.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightMask {
    pub layers: Vec<NamedMask>,
}

impl WeightMask {
    pub fn get(&self, name: &str) -> Option<&NamedMask> {
        self.layers.iter().find(|m| m.name == name)
    }

    /// Keep-mask-weighted sparsity over all masked matrices.
    pub fn global_sparsity(&self) -> f64 {
        let total: usize = self.layers.iter().map(|m| m.mask.keep.len()).sum();
        let kept: usize = self.layers.iter().map(|m| m.mask.kept()).sum();
        if total == 0 {
            0.0
        } else {
            1.0 - kept as f64 / total as f64
        }
    }
}

/// Keep-masks implied by a frozen profile: for each profiled matrix, the
/// positions currently holding a nonzero. `None` when nothing is frozen.
pub fn frozen_keep_masks(weights: &EncoderWeights) -> Option<Vec<(String, Vec<bool>)>> {
    let profile = weights.profile.as_ref().filter(|p| p.is_frozen())?;
    let masks = profile
        .layers()
        .iter()
        .filter_map(|entry| {
            let lin = weights.linear_by_name(&entry.layer)?;
            let keep = lin.weight.to_dense().values().iter().map(|v| *v != 0.0).collect();
            Some((entry.layer.clone(), keep))
        })
        .collect();
    Some(masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_profile_is_immutable() {
        let entry = LayerProfile {
            layer: "layers.0.attn.query".into(),
            target_sparsity: 0.9,
            pattern: SparsityPattern::Unstructured,
        };
        let mut p = SparsityProfile::new(vec![entry.clone()]).unwrap();
        p.set_layer(LayerProfile {
            target_sparsity: 0.5,
            ..entry.clone()
        })
        .unwrap();
        assert_eq!(p.layers().len(), 1);
        let mut frozen = p.freeze();
        assert!(frozen.set_layer(entry).is_err());
    }

    #[test]
    fn rejects_out_of_range_targets() {
        let bad = LayerProfile {
            layer: "x".into(),
            target_sparsity: 1.5,
            pattern: SparsityPattern::Unstructured,
        };
        assert!(SparsityProfile::new(vec![bad]).is_err());
    }

    #[test]
    fn pattern_serde() {
        let p = SparsityPattern::Block {
            block: BlockShape::ONE_BY_FOUR,
        };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"kind":"block","block":{"rows":1,"cols":4}}"#);
        assert_eq!(serde_json::from_str::<SparsityPattern>(&s).unwrap(), p);
    }

    #[test]
    fn mask_apply_then_sparsify_round_trip() {
        use crate::kernels::CsrMatrix;
        let m = DenseMatrix::from_fn(3, 4, |r, c| (r * 4 + c) as f32 - 5.5).unwrap();
        let mask = MatrixMask {
            rows: 3,
            cols: 4,
            keep: (0..12).map(|i| i % 3 != 0).collect(),
        };
        let masked = mask.apply(&m).unwrap();
        assert_eq!(CsrMatrix::from_dense(&masked).to_dense(), masked);
        assert_eq!(mask.kept(), 8);
    }
}
