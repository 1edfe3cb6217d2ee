//! Binary model file: `DSRM`, version, length-prefixed JSON header, payload.
//!
//! The payload lists tensors in a fixed order: token and position embeddings,
//! embedding layer norm, then per layer each matrix in slot order (weight,
//! bias), the attention layer norm and the feed-forward layer norm. Dense
//! tensors are raw `f32`; a CSR matrix is `u64 nnz`, `u64 row_ptr[rows+1]`,
//! `u32 col_idx[nnz]`, `f32 values[nnz]`; a BSR matrix is the same over the
//! block grid with `r·c` values per stored block. The header fingerprint is
//! 64-bit FNV-1a over the payload bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bytes::{put_f32s, put_prefixed, put_u32, put_u32s, put_u64, Reader};
use crate::encoder::{
    matrix_name, EncoderConfig, EncoderLayer, EncoderWeights, LayerNormParams, Linear, LinearSlot, LinearWeight,
    Storage,
};
use crate::error::{Error, Result};
use crate::hash::Fnv1a;
use crate::kernels::{BsrMatrix, CsrMatrix, DenseMatrix};
use crate::sparsity::SparsityProfile;

pub const MODEL_MAGIC: &[u8; 4] = b"DSRM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageTag {
    pub name: String,
    pub storage: Storage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub config: EncoderConfig,
    pub storage: Vec<StorageTag>,
    pub profile: Option<SparsityProfile>,
    pub fingerprint: u64,
}

/// Receives payload bytes in order.
trait Sink {
    fn put(&mut self, bytes: &[u8]);

    fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.put(&v.to_le_bytes());
        }
    }

    fn u32s(&mut self, vs: &[u32]) {
        for v in vs {
            self.put(&v.to_le_bytes());
        }
    }

    fn u64(&mut self, v: u64) {
        self.put(&v.to_le_bytes());
    }
}

impl Sink for Fnv1a {
    fn put(&mut self, bytes: &[u8]) {
        self.update(bytes);
    }
}

struct VecSink(Vec<u8>);

impl Sink for VecSink {
    fn put(&mut self, bytes: &[u8]) {
        self.0.extend_from_slice(bytes);
    }

    fn f32s(&mut self, vs: &[f32]) {
        put_f32s(&mut self.0, vs);
    }

    fn u32s(&mut self, vs: &[u32]) {
        put_u32s(&mut self.0, vs);
    }

    fn u64(&mut self, v: u64) {
        put_u64(&mut self.0, v);
    }
}

fn ptrs(sink: &mut impl Sink, ptr: &[usize]) {
    for p in ptr {
        sink.u64(*p as u64);
    }
}

fn write_payload(w: &EncoderWeights, sink: &mut impl Sink) {
    sink.f32s(w.token_emb.values());
    sink.f32s(w.pos_emb.values());
    sink.f32s(&w.emb_ln.gain);
    sink.f32s(&w.emb_ln.bias);
    for layer in &w.layers {
        for slot in LinearSlot::ALL {
            let lin = layer.linear(slot);
            match &lin.weight {
                LinearWeight::Dense(m) => sink.f32s(m.values()),
                LinearWeight::Csr(m) => {
                    sink.u64(m.nnz() as u64);
                    ptrs(sink, m.row_ptr());
                    sink.u32s(m.col_idx());
                    sink.f32s(m.values());
                }
                LinearWeight::Bsr(m) => {
                    sink.u64(m.num_blocks() as u64);
                    ptrs(sink, m.block_ptr());
                    sink.u32s(m.block_idx());
                    sink.f32s(m.block_values());
                }
            }
            sink.f32s(&lin.bias);
        }
        for ln in [&layer.attn_ln, &layer.ffn_ln] {
            sink.f32s(&ln.gain);
            sink.f32s(&ln.bias);
        }
    }
}

/// FNV-1a over the payload exactly as [`save_model`] would write it.
pub fn payload_fingerprint(w: &EncoderWeights) -> u64 {
    let mut h = Fnv1a::default();
    write_payload(w, &mut h);
    h.finish()
}

pub fn header_of(w: &EncoderWeights) -> ModelHeader {
    ModelHeader {
        config: w.config.clone(),
        storage: w
            .prunable()
            .map(|(name, lin)| StorageTag {
                name,
                storage: lin.weight.storage(),
            })
            .collect(),
        profile: w.profile.clone(),
        fingerprint: payload_fingerprint(w),
    }
}

pub fn model_to_bytes(w: &EncoderWeights) -> Result<Vec<u8>> {
    w.validate()?;
    let mut payload = VecSink(Vec::new());
    write_payload(w, &mut payload);
    let mut header = header_of(w);
    header.fingerprint = crate::hash::fnv1a64(&payload.0);
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.0.len());
    out.extend_from_slice(MODEL_MAGIC);
    put_u32(&mut out, MODEL_VERSION);
    put_prefixed(&mut out, &header)?;
    out.extend_from_slice(&payload.0);
    Ok(out)
}

fn dense(r: &mut Reader<'_>, rows: usize, cols: usize, what: &str) -> Result<DenseMatrix> {
    let at = r.offset();
    DenseMatrix::new(rows, cols, r.f32s(rows * cols, what)?).map_err(|e| Error::format(at, format!("{what}: {e}")))
}

fn vector(r: &mut Reader<'_>, n: usize, what: &str) -> Result<Vec<f32>> {
    let at = r.offset();
    let v = r.f32s(n, what)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::format(at, format!("{what} holds a non-finite value")));
    }
    Ok(v)
}

fn read_ptr(r: &mut Reader<'_>, n: usize, what: &str) -> Result<Vec<usize>> {
    (0..n).map(|_| r.count(what)).collect()
}

fn read_linear(r: &mut Reader<'_>, cfg: &EncoderConfig, slot: LinearSlot, storage: Storage, name: &str) -> Result<Linear> {
    let (o, i) = slot.shape(cfg);
    let at = r.offset();
    let bad = |e: Error| Error::format(at, format!("{name}: {e}"));
    let weight = match storage {
        Storage::Dense => LinearWeight::Dense(dense(r, o, i, name)?),
        Storage::Csr => {
            let nnz = r.count(name)?;
            if nnz > o * i {
                return Err(Error::format(at, format!("{name}: nnz {nnz} exceeds {o}x{i}")));
            }
            let row_ptr = read_ptr(r, o + 1, name)?;
            let col_idx = r.u32s(nnz, name)?;
            let values = r.f32s(nnz, name)?;
            LinearWeight::Csr(CsrMatrix::new(o, i, row_ptr, col_idx, values).map_err(bad)?)
        }
        Storage::Bsr { block } => {
            block.check_divides(o, i).map_err(bad)?;
            let grid_rows = o / block.rows;
            let blocks = r.count(name)?;
            if blocks > grid_rows * (i / block.cols) {
                return Err(Error::format(at, format!("{name}: {blocks} blocks exceed the block grid")));
            }
            let block_ptr = read_ptr(r, grid_rows + 1, name)?;
            let block_idx = r.u32s(blocks, name)?;
            let values = r.f32s(blocks * block.len(), name)?;
            LinearWeight::Bsr(BsrMatrix::new(o, i, block, block_ptr, block_idx, values).map_err(bad)?)
        }
    };
    Ok(Linear {
        weight,
        bias: vector(r, o, name)?,
    })
}

fn read_ln(r: &mut Reader<'_>, h: usize, what: &str) -> Result<LayerNormParams> {
    Ok(LayerNormParams {
        gain: vector(r, h, what)?,
        bias: vector(r, h, what)?,
    })
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<EncoderWeights> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MODEL_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::format(at, format!("unsupported model version {version}")));
    }
    let at = r.offset();
    let header: ModelHeader = serde_json::from_slice(r.prefixed("header")?)
        .map_err(|e| Error::format(at, format!("bad model header: {e}")))?;
    let payload_start = r.offset() as usize;
    let actual = crate::hash::fnv1a64(&bytes[payload_start..]);
    if actual != header.fingerprint {
        return Err(Error::format(
            payload_start as u64,
            format!("fingerprint mismatch: header {:016x}, payload {actual:016x}", header.fingerprint),
        ));
    }
    let cfg = header.config.clone();
    cfg.validate().map_err(|e| Error::format(at, e.to_string()))?;
    let expected_tags = cfg.num_layers * LinearSlot::ALL.len();
    if header.storage.len() != expected_tags {
        return Err(Error::format(at, format!("{} storage tags for {expected_tags} matrices", header.storage.len())));
    }
    let h = cfg.hidden_dim;
    let token_emb = dense(&mut r, cfg.vocab_size, h, "embeddings.token")?;
    let pos_emb = dense(&mut r, cfg.max_seq_len, h, "embeddings.position")?;
    let emb_ln = read_ln(&mut r, h, "embeddings.ln")?;
    let mut tags = header.storage.iter();
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let mut lin = Vec::with_capacity(6);
        for slot in LinearSlot::ALL {
            let name = matrix_name(l, slot);
            let tag = tags.next().expect("tag count checked");
            if tag.name != name {
                return Err(Error::format(at, format!("storage tag '{}' where '{name}' was expected", tag.name)));
            }
            lin.push(read_linear(&mut r, &cfg, slot, tag.storage, &name)?);
        }
        let attn_ln = read_ln(&mut r, h, "attn_ln")?;
        let ffn_ln = read_ln(&mut r, h, "ffn_ln")?;
        let mut lin = lin.into_iter();
        let mut next = || lin.next().expect("six matrices");
        layers.push(EncoderLayer {
            query: next(),
            key: next(),
            value: next(),
            attn_out: next(),
            ff_in: next(),
            ff_out: next(),
            attn_ln,
            ffn_ln,
        });
    }
    r.finish()?;
    let w = EncoderWeights {
        config: cfg,
        token_emb,
        pos_emb,
        emb_ln,
        layers,
        profile: header.profile,
    };
    w.validate().map_err(|e| Error::format(payload_start as u64, e.to_string()))?;
    Ok(w)
}

pub fn save_model(w: &EncoderWeights, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_bytes(w)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EncoderWeights> {
    model_from_bytes(&std::fs::read(path)?)
}

/// Bytes taken by the six prunable matrices of each layer in the payload.
pub fn matrix_payload_bytes(w: &EncoderWeights) -> usize {
    w.prunable()
        .map(|(_, lin)| match &lin.weight {
            LinearWeight::Dense(m) => m.values().len() * 4,
            LinearWeight::Csr(m) => 8 + (m.rows() + 1) * 8 + m.nnz() * 8,
            LinearWeight::Bsr(m) => 8 + m.block_ptr().len() * 8 + m.num_blocks() * (4 + m.block().len() * 4),
        })
        .sum()
}
