use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bytes::{put_f32s, put_prefixed, put_u32, Reader};
use crate::error::{Error, Result};

use super::{FlatIndex, IndexMetadata};

pub const INDEX_MAGIC: &[u8; 4] = b"DSRI";
pub const INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    count: usize,
    normalized: bool,
    fingerprint: u64,
}

/// Magic, version, JSON header, id table, then `count × dim` `f32`s.
pub fn index_to_bytes(index: &FlatIndex) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        dim: index.dim,
        count: index.len(),
        normalized: index.metadata.normalized,
        fingerprint: index.metadata.fingerprint,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + index.vectors.len() * 4);
    out.extend_from_slice(INDEX_MAGIC);
    put_u32(&mut out, INDEX_VERSION);
    put_prefixed(&mut out, &header)?;
    for id in &index.doc_ids {
        put_prefixed(&mut out, id.as_bytes())?;
    }
    put_f32s(&mut out, &index.vectors);
    Ok(out)
}

pub fn index_from_bytes(bytes: &[u8]) -> Result<FlatIndex> {
    let mut r = Reader::new(bytes);
    r.expect_magic(INDEX_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != INDEX_VERSION {
        return Err(Error::format(at, format!("unsupported index version {version}")));
    }
    let at = r.offset();
    let header: Header = serde_json::from_slice(r.prefixed("header")?)
        .map_err(|e| Error::format(at, format!("bad index header: {e}")))?;
    let mut ids = Vec::with_capacity(header.count.min(r.remaining() / 4));
    for _ in 0..header.count {
        let at = r.offset();
        let raw = r.prefixed("doc_id")?;
        let id = std::str::from_utf8(raw).map_err(|e| Error::format(at, format!("doc_id is not UTF-8: {e}")))?;
        ids.push(id.to_string());
    }
    let n = header
        .count
        .checked_mul(header.dim)
        .ok_or_else(|| Error::format(r.offset(), "vector count overflows"))?;
    let vectors = r.f32s(n, "vectors")?;
    r.finish()?;
    let at = r.offset();
    FlatIndex::new(
        header.dim,
        ids,
        vectors,
        IndexMetadata {
            fingerprint: header.fingerprint,
            normalized: header.normalized,
        },
    )
    .map_err(|e| Error::format(at, e.to_string()))
}

pub fn save_index(index: &FlatIndex, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, index_to_bytes(index)?)?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<FlatIndex> {
    index_from_bytes(&std::fs::read(path)?)
}
