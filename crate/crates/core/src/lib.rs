//! Dense retrieval with sparse transformer encoders.
//!
//! The crate covers the full desk-scale loop: dense and sparse (CSR / BSR)
//! kernels, a small BERT-style encoder that runs over either storage, magnitude
//! pruning with frozen sparsity profiles, tied and untied bi-encoder training,
//! an exact inner-product flat index, retrieval metrics, and a query-encoding
//! throughput harness.

pub mod benchharness;
pub mod biencoder;
pub mod encoder;
pub mod error;
pub mod evalmetrics;
pub mod kernels;
pub mod pipeline;
pub mod retrieval;
pub mod sparsity;

mod bytes;
mod hash;

pub use biencoder::{BiEncoder, LossKind, TiedMode, TrainConfig, TrainExample};
pub use encoder::{EncoderConfig, EncoderWeights, Pooling, TokenSequence};
pub use error::{Error, Result};
pub use kernels::{BsrMatrix, CsrMatrix, DenseMatrix, VectorF};
pub use retrieval::{FlatIndex, RankedRun};
pub use sparsity::{SparsityPattern, SparsityProfile, WeightMask};
