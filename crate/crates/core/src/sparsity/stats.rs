use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::encoder::{EncoderWeights, Storage};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerStats {
    #[serde(skip)]
    pub name: String,
    pub sparsity: f64,
    pub nnz: usize,
    pub total: usize,
    pub pattern: String,
    pub storage: Storage,
}

/// Achieved sparsity per prunable matrix and over all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub layers: Vec<LayerStats>,
    /// `1 − Σ nnz / Σ total` over the prunable matrices.
    pub global_sparsity: f64,
    pub nnz: usize,
    pub total: usize,
}

impl SparsityReport {
    pub fn layer(&self, name: &str) -> Option<&LayerStats> {
        self.layers.iter().find(|l| l.name == name)
    }
}

impl Serialize for SparsityReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct Layers<'a>(&'a [LayerStats]);
        impl Serialize for Layers<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut map = s.serialize_map(Some(self.0.len()))?;
                for l in self.0 {
                    map.serialize_entry(&l.name, l)?;
                }
                map.end()
            }
        }
        let mut map = s.serialize_map(Some(4))?;
        map.serialize_entry("layers", &Layers(&self.layers))?;
        map.serialize_entry("global_sparsity", &self.global_sparsity)?;
        map.serialize_entry("nnz", &self.nnz)?;
        map.serialize_entry("total", &self.total)?;
        map.end()
    }
}

pub fn sparsity_stats(weights: &EncoderWeights) -> SparsityReport {
    let profile = weights.profile.as_ref();
    let mut layers = Vec::new();
    let (mut nnz_sum, mut total_sum) = (0usize, 0usize);
    for (name, lin) in weights.prunable() {
        let (o, i) = lin.weight.shape();
        let total = o * i;
        let nnz = lin.weight.nnz();
        let pattern = profile
            .and_then(|p| p.layer(&name))
            .map(|e| e.pattern.label())
            .unwrap_or_else(|| "none".into());
        layers.push(LayerStats {
            sparsity: if total == 0 { 0.0 } else { (total - nnz) as f64 / total as f64 },
            nnz,
            total,
            pattern,
            storage: lin.weight.storage(),
            name,
        });
        nnz_sum += nnz;
        total_sum += total;
    }
    SparsityReport {
        layers,
        global_sparsity: if total_sum == 0 {
            0.0
        } else {
            1.0 - nnz_sum as f64 / total_sum as f64
        },
        nnz: nnz_sum,
        total: total_sum,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::kernels::BlockShape;
    use crate::sparsity::{apply_and_freeze, prune_encoder, SparsityPattern};

    #[test]
    fn dense_random_weights_are_not_sparse() {
        let w = EncoderWeights::init(EncoderConfig::tiny(), 9).unwrap();
        let r = sparsity_stats(&w);
        assert!(r.global_sparsity < 1e-3);
        assert_eq!(r.layers.len(), 12);
        assert_eq!(r.layers[0].pattern, "none");
    }

    #[test]
    fn counting_after_pruning() {
        let w = EncoderWeights::init(EncoderConfig::tiny(), 9).unwrap();
        let m = prune_encoder(&w, 0.9, SparsityPattern::Unstructured).unwrap();
        let r = sparsity_stats(&apply_and_freeze(&w, &m).unwrap());
        assert!((r.global_sparsity - 0.9).abs() <= 1.0 / r.total as f64 * 12.0);
        for l in &r.layers {
            assert!((l.sparsity - 0.9).abs() <= 1.0 / l.total as f64);
        }

        let block = SparsityPattern::Block { block: BlockShape::ONE_BY_FOUR };
        let m = prune_encoder(&w, 0.8, block).unwrap();
        let r = sparsity_stats(&apply_and_freeze(&w, &m).unwrap());
        for l in &r.layers {
            let blocks = l.total / 4;
            assert!((l.sparsity - 0.8).abs() <= 1.0 / blocks as f64);
            assert_eq!(l.pattern, "block(1x4)");
        }
    }

    #[test]
    fn json_keeps_layer_order() {
        let w = EncoderWeights::init(EncoderConfig::tiny(), 9).unwrap();
        let json = serde_json::to_string(&sparsity_stats(&w)).unwrap();
        let q0 = json.find("layers.0.attn.query").unwrap();
        let f1 = json.find("layers.1.ffn.out").unwrap();
        assert!(q0 < f1);
        assert!(json.contains("\"global_sparsity\""));
    }
}
