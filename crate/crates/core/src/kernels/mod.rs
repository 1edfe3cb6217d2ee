//! Dense and sparse linear-algebra primitives.
//!
//! Everything here is pure `f32` arithmetic with a fixed accumulation order,
//! so identical inputs produce bit-identical outputs. The sparse products
//! ([`spmm_csr`], [`spmm_bsr`]) accumulate in the same order as
//! [`dense_matmul`], which is what makes dense and sparse execution of the
//! same weights interchangeable.

mod bsr;
mod csr;
mod dense;
mod scalar;

pub use bsr::{spmm_bsr, BlockShape, BsrMatrix};
pub use csr::{spmm_csr, CsrMatrix};
pub use dense::{dense_matmul, DenseMatrix};
pub use scalar::Real;

pub(crate) use dense::axpy;

use crate::error::{Error, Result};

/// A finite `f32` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorF(Vec<f32>);

impl VectorF {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("vector contains non-finite values"));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl AsRef<[f32]> for VectorF {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Layer normalization with population variance, followed by the affine
/// `gain`/`bias`.
pub fn layer_norm(x: &VectorF, gain: &VectorF, bias: &VectorF, eps: f32) -> Result<VectorF> {
    if x.len() != gain.len() || x.len() != bias.len() {
        return Err(Error::dims(
            "layer_norm",
            format!("gain and bias of length {}", x.len()),
            format!("{} and {}", gain.len(), bias.len()),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("layer_norm eps must be positive"));
    }
    if x.is_empty() {
        return Ok(VectorF(Vec::new()));
    }
    let mut out = x.0.clone();
    layer_norm_in_place(&mut out, &gain.0, &bias.0, eps);
    VectorF::new(out)
}

pub(crate) fn layer_norm_in_place(x: &mut [f32], gain: &[f32], bias: &[f32], eps: f32) {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for ((v, g), b) in x.iter_mut().zip(gain).zip(bias) {
        *v = (*v - mean) * inv * g + b;
    }
}

/// Exact GELU, `x·Φ(x)` with Φ from `erf`.
#[inline]
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    if m.cols() > 0 {
        for row in out.values_mut().chunks_exact_mut(m.cols()) {
            softmax_in_place(row);
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}
