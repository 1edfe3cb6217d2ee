//! BERT-style transformer encoder producing fixed-size text embeddings.
//!
//! Post-LN blocks with learned positions and exact GELU. Each of the six
//! per-layer matrices may be stored dense, CSR or BSR; the forward pass
//! routes every product through the kernel that matches its storage.

mod config;
mod forward;
mod tokenizer;
mod weights;

pub use config::{EncoderConfig, Pooling, FIRST_WORD_ID};
pub use forward::{encode, encode_with, forward, pool, EncodeOptions, HiddenStates};
pub use tokenizer::{tokenize, word_id, words, TokenSequence};
pub use weights::{
    matrix_name, parse_matrix_name, EncoderLayer, EncoderWeights, LayerNormParams, Linear,
    LinearSlot, LinearWeight, Storage, INIT_STD,
};

