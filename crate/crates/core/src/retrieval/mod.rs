//! Exact inner-product flat index.
//!
//! Documents are encoded offline into a row-major matrix; a query vector is
//! scored against every row and the top `k` come back ordered by score, with
//! ties going to the lexicographically smaller `doc_id`.

mod io;

pub use io::{index_from_bytes, index_to_bytes, load_index, save_index, INDEX_MAGIC, INDEX_VERSION};

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::biencoder::BiEncoder;
use crate::encoder::{encode_with, EncodeOptions, EncoderWeights};
use crate::error::{Error, Result};

/// Default token budget for documents.
pub const DOC_MAX_LEN: usize = 128;
/// Default token budget for queries.
pub const QUERY_MAX_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "docid")]
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    documents: Vec<Document>,
}

impl Corpus {
    /// Rejects empty or repeated ids.
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for d in &documents {
            if d.doc_id.is_empty() {
                return Err(Error::invalid("empty doc_id"));
            }
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::invalid(format!("duplicate doc_id '{}'", d.doc_id)));
            }
        }
        Ok(Self { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMetadata {
    /// Fingerprint of the encoder that produced the vectors.
    pub fingerprint: u64,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    doc_ids: Vec<String>,
    vectors: Vec<f32>,
    metadata: IndexMetadata,
}

impl FlatIndex {
    pub fn new(dim: usize, doc_ids: Vec<String>, vectors: Vec<f32>, metadata: IndexMetadata) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("index dimension must be positive"));
        }
        if vectors.len() != doc_ids.len() * dim {
            return Err(Error::dims("FlatIndex::new", doc_ids.len() * dim, vectors.len()));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("index vectors must be finite"));
        }
        let mut seen = HashSet::with_capacity(doc_ids.len());
        for id in &doc_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate doc_id '{id}' in index")));
            }
        }
        if metadata.normalized {
            for (id, row) in doc_ids.iter().zip(vectors.chunks_exact(dim)) {
                let norm = row.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-4 {
                    return Err(Error::invalid(format!(
                        "index flagged normalized but '{id}' has norm {norm}"
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            doc_ids,
            vectors,
            metadata,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn metadata(&self) -> IndexMetadata {
        self.metadata
    }

    /// Appends `other`'s rows after this index's rows.
    pub fn concat(&self, other: &FlatIndex) -> Result<FlatIndex> {
        if self.dim != other.dim || self.metadata != other.metadata {
            return Err(Error::invalid("indexes differ in dimension or encoder"));
        }
        let mut ids = self.doc_ids.clone();
        ids.extend(other.doc_ids.iter().cloned());
        let mut vectors = self.vectors.clone();
        vectors.extend_from_slice(&other.vectors);
        FlatIndex::new(self.dim, ids, vectors, self.metadata)
    }
}

/// Encodes every document at [`DOC_MAX_LEN`] tokens (capped by the model's
/// position table).
pub fn build_index(corpus: &Corpus, encoder: &EncoderWeights, batch_size: usize) -> Result<FlatIndex> {
    let max_len = DOC_MAX_LEN.min(encoder.config.max_seq_len);
    build_index_with(corpus, encoder, EncodeOptions::new(max_len, batch_size))
}

pub fn build_index_with(corpus: &Corpus, encoder: &EncoderWeights, opts: EncodeOptions) -> Result<FlatIndex> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot index an empty corpus"));
    }
    if opts.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let dim = encoder.config.hidden_dim;
    let mut vectors = Vec::with_capacity(corpus.len() * dim);
    for chunk in corpus.documents().chunks(opts.batch_size) {
        let texts: Vec<&str> = chunk.iter().map(|d| d.text.as_str()).collect();
        match encode_with(encoder, &texts, opts) {
            Ok(m) => vectors.extend_from_slice(m.values()),
            Err(e) => {
                let culprit = chunk
                    .iter()
                    .find(|d| encode_with(encoder, &[d.text.as_str()], opts).is_err())
                    .map_or("<batch>", |d| d.doc_id.as_str());
                return Err(Error::invalid(format!("encoding doc_id '{culprit}' failed: {e}")));
            }
        }
    }
    FlatIndex::new(
        dim,
        corpus.documents().iter().map(|d| d.doc_id.clone()).collect(),
        vectors,
        IndexMetadata {
            fingerprint: encoder.fingerprint(),
            normalized: encoder.config.normalize_embeddings,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f32,
}

/// Higher score first, then smaller doc_id.
fn hit_order(a: &(f32, &str), b: &(f32, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Exact top-`k` by inner product. Returns every document when `k` exceeds
/// the index size.
pub fn search(index: &FlatIndex, query: &[f32], k: usize) -> Result<Vec<Hit>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if query.len() != index.dim {
        return Err(Error::dims("search", index.dim, query.len()));
    }
    let mut scored: Vec<(f32, &str)> = index
        .vectors
        .chunks_exact(index.dim)
        .zip(&index.doc_ids)
        .map(|(row, id)| (row.iter().zip(query).fold(0.0f32, |s, (a, b)| s + a * b), id.as_str()))
        .collect();
    let k = k.min(scored.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, hit_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(hit_order);
    Ok(scored
        .into_iter()
        .map(|(score, id)| Hit {
            doc_id: id.to_string(),
            score,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

/// Ranked hits per query, in query submission order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedRun {
    queries: Vec<(String, Vec<Hit>)>,
}

impl RankedRun {
    /// Rejects repeated query ids, repeated doc ids within a query, and
    /// increasing scores.
    pub fn new(queries: Vec<(String, Vec<Hit>)>) -> Result<Self> {
        let mut qids = HashSet::with_capacity(queries.len());
        for (qid, hits) in &queries {
            if !qids.insert(qid.as_str()) {
                return Err(Error::invalid(format!("duplicate query id '{qid}'")));
            }
            let mut docs = HashSet::with_capacity(hits.len());
            for h in hits {
                if !docs.insert(h.doc_id.as_str()) {
                    return Err(Error::invalid(format!("query '{qid}' ranks '{}' twice", h.doc_id)));
                }
            }
            if hits.windows(2).any(|w| w[1].score > w[0].score) {
                return Err(Error::invalid(format!("query '{qid}' has increasing scores")));
            }
        }
        Ok(Self { queries })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn get(&self, query_id: &str) -> Option<&[Hit]> {
        self.queries
            .iter()
            .find(|(q, _)| q == query_id)
            .map(|(_, h)| h.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Hit])> {
        self.queries.iter().map(|(q, h)| (q.as_str(), h.as_slice()))
    }
}

/// `None` when `encoder` produced the index; otherwise a human-readable
/// mismatch description.
pub fn verify_encoder(index: &FlatIndex, encoder: &EncoderWeights) -> Option<String> {
    let fp = encoder.fingerprint();
    (fp != index.metadata.fingerprint).then(|| {
        format!(
            "index was built by encoder {:016x} but the document encoder is {:016x}",
            index.metadata.fingerprint, fp
        )
    })
}

/// Encodes the queries with the query encoder at [`QUERY_MAX_LEN`] tokens and
/// searches each one.
pub fn search_batch(index: &FlatIndex, model: &BiEncoder, queries: &[Query], k: usize) -> Result<RankedRun> {
    let max_len = QUERY_MAX_LEN.min(model.query_encoder().config.max_seq_len);
    search_batch_with(index, model, queries, k, EncodeOptions::new(max_len, 32))
}

pub fn search_batch_with(
    index: &FlatIndex,
    model: &BiEncoder,
    queries: &[Query],
    k: usize,
    opts: EncodeOptions,
) -> Result<RankedRun> {
    let mut seen = HashSet::with_capacity(queries.len());
    for q in queries {
        if !seen.insert(q.query_id.as_str()) {
            return Err(Error::invalid(format!("duplicate query id '{}'", q.query_id)));
        }
    }
    if let Some(msg) = verify_encoder(index, model.doc_encoder()) {
        log::warn!("{msg}");
    }
    let texts: Vec<&str> = queries.iter().map(|q| q.text.as_str()).collect();
    let vectors = encode_with(model.query_encoder(), &texts, opts)?;
    let mut out = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        out.push((q.query_id.clone(), search(index, vectors.row(i), k)?));
    }
    RankedRun::new(out)
}
