use crate::encoder::{EncoderWeights, Storage};
use crate::error::{Error, Result};

use super::SparsityPattern;

/// Stores every profiled matrix sparse: unstructured layers as CSR, block
/// layers as BSR with the profile's block shape. Only frozen weights can be
/// compressed.
pub fn compress(weights: &EncoderWeights) -> Result<EncoderWeights> {
    let profile = weights
        .profile
        .as_ref()
        .filter(|p| p.is_frozen())
        .ok_or_else(|| Error::invalid("compress requires a frozen sparsity profile"))?;
    let mut out = weights.clone();
    for entry in profile.layers() {
        let lin = out
            .linear_by_name_mut(&entry.layer)
            .ok_or_else(|| Error::invalid(format!("profile names unknown matrix '{}'", entry.layer)))?;
        let storage = match entry.pattern {
            SparsityPattern::Unstructured => Storage::Csr,
            SparsityPattern::Block { block } => Storage::Bsr { block },
        };
        lin.weight = lin.weight.convert(storage)?;
    }
    Ok(out)
}

/// Inverse of [`compress`]: every matrix back to dense storage.
pub fn decompress(weights: &EncoderWeights) -> EncoderWeights {
    weights.to_dense_storage()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode, EncoderConfig};
    use crate::kernels::BlockShape;
    use crate::sparsity::{apply_and_freeze, prune_encoder, sparsity_stats};

    #[test]
    fn unfrozen_is_rejected() {
        let w = EncoderWeights::init(EncoderConfig::tiny(), 1).unwrap();
        assert!(compress(&w).is_err());
    }

    #[test]
    fn no_pruning_gives_full_csr() {
        let w = EncoderWeights::init(EncoderConfig::tiny(), 1).unwrap();
        let frozen = apply_and_freeze(&w, &prune_encoder(&w, 0.0, SparsityPattern::Unstructured).unwrap()).unwrap();
        let c = compress(&frozen).unwrap();
        for (_, lin) in c.prunable() {
            assert_eq!(lin.weight.storage(), Storage::Csr);
            let (o, i) = lin.weight.shape();
            assert_eq!(lin.weight.nnz(), o * i);
        }
    }

    #[test]
    fn compression_preserves_outputs_and_round_trips() {
        let w = EncoderWeights::init(EncoderConfig::tiny(), 2).unwrap();
        let texts = ["compressed weights give the same vectors", "second query", "x y z"];
        for pattern in [
            SparsityPattern::Unstructured,
            SparsityPattern::Block { block: BlockShape::ONE_BY_FOUR },
        ] {
            let frozen = apply_and_freeze(&w, &prune_encoder(&w, 0.8, pattern).unwrap()).unwrap();
            let c = compress(&frozen).unwrap();
            assert_eq!(sparsity_stats(&c).global_sparsity, sparsity_stats(&frozen).global_sparsity);
            let a = encode(&frozen, &texts, 32, 2).unwrap();
            let b = encode(&c, &texts, 32, 2).unwrap();
            let diff = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
            assert!(diff <= 1e-5);
            assert_eq!(decompress(&c), frozen);
        }
    }
}
