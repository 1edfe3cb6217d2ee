use std::cmp::Ordering;

use crate::encoder::{EncoderWeights, LinearWeight};
use crate::error::{Error, Result};
use crate::kernels::{BlockShape, DenseMatrix};

use super::{check_fraction, LayerProfile, MatrixMask, NamedMask, SparsityPattern, SparsityProfile, WeightMask};

/// `floor(total × (1 − sparsity))`. The tiny slack absorbs binary rounding
/// of the product (10 × (1 − 0.9) is 0.9999999999999998 in `f64`).
pub fn kept_count(total: usize, sparsity: f64) -> usize {
    (((total as f64) * (1.0 - sparsity)) + 1e-9).floor().min(total as f64) as usize
}

/// Larger score first, then lower index first.
fn rank(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b))
}

fn top_k(scores: &[f64], k: usize) -> Vec<bool> {
    let mut keep = vec![false; scores.len()];
    if k == 0 {
        return keep;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, rank(scores));
    }
    for &i in &idx[..k] {
        keep[i] = true;
    }
    keep
}

/// One-shot unstructured magnitude pruning: keeps the `floor(n(1−s))`
/// largest-magnitude entries, lower flat index winning ties.
pub fn magnitude_prune(weights: &DenseMatrix, sparsity: f64) -> Result<MatrixMask> {
    check_fraction(sparsity)?;
    let scores: Vec<f64> = weights.values().iter().map(|v| v.abs() as f64).collect();
    let k = kept_count(scores.len(), sparsity);
    Ok(MatrixMask {
        rows: weights.rows(),
        cols: weights.cols(),
        keep: top_k(&scores, k),
    })
}

/// Block magnitude pruning: each block scores the sum of its `|w|`; the top
/// `floor(blocks(1−s))` blocks survive whole, lower block index (row-major
/// over the block grid) winning ties.
pub fn block_magnitude_prune(weights: &DenseMatrix, sparsity: f64, block: BlockShape) -> Result<MatrixMask> {
    check_fraction(sparsity)?;
    let (rows, cols) = weights.shape();
    block.check_divides(rows, cols)?;
    let grid_cols = cols / block.cols;
    let num_blocks = (rows / block.rows) * grid_cols;
    let mut scores = vec![0.0f64; num_blocks];
    for r in 0..rows {
        for (c, v) in weights.row(r).iter().enumerate() {
            scores[(r / block.rows) * grid_cols + c / block.cols] += v.abs() as f64;
        }
    }
    let kept_blocks = top_k(&scores, kept_count(num_blocks, sparsity));
    let mut keep = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            keep[r * cols + c] = kept_blocks[(r / block.rows) * grid_cols + c / block.cols];
        }
    }
    Ok(MatrixMask { rows, cols, keep })
}

/// Masks every prunable matrix of the encoder to a uniform target.
pub fn prune_encoder(weights: &EncoderWeights, sparsity: f64, pattern: SparsityPattern) -> Result<WeightMask> {
    let mut layers = Vec::new();
    for (name, lin) in weights.prunable() {
        let dense = lin.weight.to_dense();
        let mask = match pattern {
            SparsityPattern::Unstructured => magnitude_prune(&dense, sparsity)?,
            SparsityPattern::Block { block } => block_magnitude_prune(&dense, sparsity, block)
                .map_err(|e| Error::invalid(format!("{name}: {e}")))?,
        };
        layers.push(NamedMask {
            name,
            target_sparsity: sparsity,
            pattern,
            mask,
        });
    }
    Ok(WeightMask { layers })
}

/// Zeroes masked weights and records a frozen profile. The returned weights
/// store every matrix dense; call [`super::compress`] for sparse storage.
pub fn apply_and_freeze(weights: &EncoderWeights, mask: &WeightMask) -> Result<EncoderWeights> {
    if weights.profile.as_ref().is_some_and(|p| p.is_frozen()) {
        return Err(Error::invalid("weights already carry a frozen sparsity profile"));
    }
    let mut out = weights.to_dense_storage();
    let mut entries = Vec::with_capacity(mask.layers.len());
    for m in &mask.layers {
        let lin = out
            .linear_by_name_mut(&m.name)
            .ok_or_else(|| Error::invalid(format!("mask names unknown matrix '{}'", m.name)))?;
        let dense = lin.weight.to_dense();
        if let SparsityPattern::Block { block } = m.pattern {
            block.check_divides(dense.rows(), dense.cols())?;
        }
        lin.weight = LinearWeight::Dense(m.mask.apply(&dense)?);
        entries.push(LayerProfile {
            layer: m.name.clone(),
            target_sparsity: m.target_sparsity,
            pattern: m.pattern,
        });
    }
    out.profile = Some(SparsityProfile::new(entries)?.freeze());
    Ok(out)
}
