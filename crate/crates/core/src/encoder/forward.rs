//! Inference path.
//!
//! Activations are kept feature-major (`hidden × tokens`), with the tokens of
//! every sequence in the batch laid side by side. A linear layer is then a
//! single `W × X` product, which is exactly the shape the sparse kernels
//! accelerate (sparse weights on the left, dense activations on the right).

use crate::error::{Error, Result};
use crate::kernels::{axpy, gelu, softmax_in_place, DenseMatrix};

use super::config::{EncoderConfig, Pooling};
use super::tokenizer::{tokenize, TokenSequence};
use super::weights::{EncoderWeights, LayerNormParams, Linear};

/// Encoder output: `batch × seq` token states, each of width `hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub batch: usize,
    pub seq: usize,
    /// `(batch * seq) × hidden`, sequence-major.
    pub states: DenseMatrix,
}

impl HiddenStates {
    pub fn hidden(&self) -> usize {
        self.states.cols()
    }

    /// State of token `pos` in sequence `b`.
    pub fn token(&self, b: usize, pos: usize) -> &[f32] {
        self.states.row(b * self.seq + pos)
    }
}

/// Runs the encoder stack over a batch. Sequences shorter than the longest
/// one are treated as padded; padded keys never receive attention.
pub fn forward(weights: &EncoderWeights, batch: &[TokenSequence]) -> Result<HiddenStates> {
    if batch.is_empty() {
        return Err(Error::invalid("forward needs a nonempty batch"));
    }
    let seq = batch.iter().map(TokenSequence::len).max().unwrap_or(0);
    let cols = forward_columns(weights, batch, seq)?;
    Ok(HiddenStates {
        batch: batch.len(),
        seq,
        states: cols.transpose(),
    })
}

/// Feature-major forward: returns `hidden × (batch * seq)`.
pub(crate) fn forward_columns(
    weights: &EncoderWeights,
    batch: &[TokenSequence],
    seq: usize,
) -> Result<DenseMatrix> {
    weights.validate()?;
    let cfg = &weights.config;
    for s in batch {
        s.check_against(cfg)?;
    }
    let h = cfg.hidden_dim;
    let t = batch.len() * seq;
    let lens: Vec<usize> = batch.iter().map(TokenSequence::valid_len).collect();

    let mut x = vec![0.0f32; h * t];
    let tok = weights.token_emb.values();
    let pos = weights.pos_emb.values();
    for (b, s) in batch.iter().enumerate() {
        for p in 0..seq {
            let id = s.ids().get(p).copied().unwrap_or(cfg.pad_id) as usize;
            let col = b * seq + p;
            for r in 0..h {
                x[r * t + col] = tok[id * h + r] + pos[p * h + r];
            }
        }
    }
    layer_norm_columns(&mut x, h, t, &weights.emb_ln, cfg.layer_norm_eps);
    let mut x = DenseMatrix::from_parts(h, t, x);

    for layer in &weights.layers {
        let q = linear(&layer.query, &x)?;
        let k = linear(&layer.key, &x)?;
        let v = linear(&layer.value, &x)?;
        let ctx = attention(cfg, &q, &k, &v, &lens, seq);
        let mut a = linear(&layer.attn_out, &ctx)?;
        for (o, r) in a.values_mut().iter_mut().zip(x.values()) {
            *o += r;
        }
        layer_norm_columns(a.values_mut(), h, t, &layer.attn_ln, cfg.layer_norm_eps);

        let mut f = linear(&layer.ff_in, &a)?;
        for v in f.values_mut() {
            *v = gelu(*v);
        }
        let mut out = linear(&layer.ff_out, &f)?;
        for (o, r) in out.values_mut().iter_mut().zip(a.values()) {
            *o += r;
        }
        layer_norm_columns(out.values_mut(), h, t, &layer.ffn_ln, cfg.layer_norm_eps);
        x = out;
    }
    Ok(x)
}

fn linear(lin: &Linear, x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut y = lin.weight.matmul(x)?;
    let t = y.cols();
    if t > 0 {
        for (row, b) in y.values_mut().chunks_exact_mut(t).zip(&lin.bias) {
            for v in row {
                *v += b;
            }
        }
    }
    Ok(y)
}

/// Layer norm over each column of a `h × t` feature-major block. Same
/// operation order as the row-wise kernel.
fn layer_norm_columns(x: &mut [f32], h: usize, t: usize, ln: &LayerNormParams, eps: f32) {
    let mut mean = vec![0.0f32; t];
    for row in x.chunks_exact(t) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let hf = h as f32;
    for m in &mut mean {
        *m /= hf;
    }
    let mut var = vec![0.0f32; t];
    for row in x.chunks_exact(t) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv: Vec<f32> = var.iter().map(|s| 1.0 / (s / hf + eps).sqrt()).collect();
    for ((row, g), b) in x.chunks_exact_mut(t).zip(&ln.gain).zip(&ln.bias) {
        for ((v, m), i) in row.iter_mut().zip(&mean).zip(&inv) {
            *v = (*v - m) * i * g + b;
        }
    }
}

/// Multi-head scaled dot-product attention over feature-major Q/K/V.
fn attention(
    cfg: &EncoderConfig,
    q: &DenseMatrix,
    k: &DenseMatrix,
    v: &DenseMatrix,
    lens: &[usize],
    seq: usize,
) -> DenseMatrix {
    let h = cfg.hidden_dim;
    let t = q.cols();
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = vec![0.0f32; h * t];
    let mut qh = vec![0.0f32; seq * dh];
    let mut kh = vec![0.0f32; seq * dh];
    let mut vh = vec![0.0f32; seq * dh];
    let mut scores = vec![0.0f32; seq];
    let mut ctx = vec![0.0f32; dh];
    for (b, &len) in lens.iter().enumerate() {
        let col0 = b * seq;
        for head in 0..cfg.num_heads {
            for d in 0..dh {
                let row = (head * dh + d) * t + col0;
                for i in 0..seq {
                    qh[i * dh + d] = q.values()[row + i];
                    kh[i * dh + d] = k.values()[row + i];
                    vh[i * dh + d] = v.values()[row + i];
                }
            }
            for i in 0..seq {
                let qi = &qh[i * dh..(i + 1) * dh];
                for (j, s) in scores[..len].iter_mut().enumerate() {
                    let kj = &kh[j * dh..(j + 1) * dh];
                    *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
                }
                softmax_in_place(&mut scores[..len]);
                ctx.fill(0.0);
                for (j, &p) in scores[..len].iter().enumerate() {
                    axpy(p, &vh[j * dh..(j + 1) * dh], &mut ctx);
                }
                for (d, c) in ctx.iter().enumerate() {
                    out[(head * dh + d) * t + col0 + i] = *c;
                }
            }
        }
    }
    DenseMatrix::from_parts(h, t, out)
}

/// Reduces token states to one row per sequence; optionally L2-normalizes.
pub fn pool(
    states: &HiddenStates,
    masks: &[&[u8]],
    mode: Pooling,
    normalize: bool,
) -> Result<DenseMatrix> {
    if masks.len() != states.batch {
        return Err(Error::dims("pool", states.batch, masks.len()));
    }
    let h = states.hidden();
    let mut out = Vec::with_capacity(states.batch * h);
    for (b, mask) in masks.iter().enumerate() {
        if mask.len() > states.seq {
            return Err(Error::dims("pool", format!("mask of length <= {}", states.seq), mask.len()));
        }
        let valid: Vec<usize> = (0..mask.len()).filter(|&p| mask[p] != 0).collect();
        if valid.is_empty() {
            return Err(Error::invalid(format!("sequence {b} has an all-zero attention mask")));
        }
        let mut row = match mode {
            Pooling::Cls => states.token(b, 0).to_vec(),
            Pooling::Mean => {
                let mut acc = vec![0.0f32; h];
                for &p in &valid {
                    axpy(1.0, states.token(b, p), &mut acc);
                }
                let n = valid.len() as f32;
                acc.iter_mut().for_each(|v| *v /= n);
                acc
            }
        };
        if normalize {
            l2_normalize(&mut row);
        }
        out.extend_from_slice(&row);
    }
    Ok(DenseMatrix::from_parts(states.batch, h, out))
}

pub(crate) fn l2_normalize(row: &mut [f32]) {
    let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Knobs for [`encode_with`].
#[derive(Debug, Clone, Copy)]
pub struct EncodeOptions {
    pub max_len: usize,
    pub batch_size: usize,
    /// Run every sequence at the full `max_len` instead of trimming each
    /// batch to its longest sequence. Trimming does not change results;
    /// full-length execution is what a static-shape serving engine does.
    pub pad_to_max_len: bool,
}

impl EncodeOptions {
    pub fn new(max_len: usize, batch_size: usize) -> Self {
        Self {
            max_len,
            batch_size,
            pad_to_max_len: false,
        }
    }
}

/// Tokenize → forward → pool, in submission order. One row per text.
pub fn encode<S: AsRef<str>>(
    weights: &EncoderWeights,
    texts: &[S],
    max_len: usize,
    batch_size: usize,
) -> Result<DenseMatrix> {
    encode_with(weights, texts, EncodeOptions::new(max_len, batch_size))
}

pub fn encode_with<S: AsRef<str>>(
    weights: &EncoderWeights,
    texts: &[S],
    opts: EncodeOptions,
) -> Result<DenseMatrix> {
    if opts.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let cfg = &weights.config;
    let h = cfg.hidden_dim;
    let mut out = Vec::with_capacity(texts.len() * h);
    for chunk in texts.chunks(opts.batch_size) {
        let mut seqs = chunk
            .iter()
            .map(|t| tokenize(cfg, t.as_ref(), opts.max_len))
            .collect::<Result<Vec<_>>>()?;
        if !opts.pad_to_max_len {
            let longest = seqs.iter().map(TokenSequence::valid_len).max().unwrap_or(2);
            seqs = seqs
                .iter()
                .map(|s| trim(s, longest))
                .collect::<Result<Vec<_>>>()?;
        }
        let states = forward(weights, &seqs)?;
        let masks: Vec<&[u8]> = seqs.iter().map(TokenSequence::attention_mask).collect();
        let pooled = pool(&states, &masks, cfg.pooling, cfg.normalize_embeddings)?;
        out.extend_from_slice(pooled.values());
    }
    Ok(DenseMatrix::from_parts(texts.len(), h, out))
}

fn trim(s: &TokenSequence, len: usize) -> Result<TokenSequence> {
    TokenSequence::new(s.ids()[..len].to_vec(), s.attention_mask()[..len].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::weights::Storage;
    use crate::kernels::BlockShape;

    fn tiny() -> EncoderWeights {
        EncoderWeights::init(EncoderConfig::tiny(), 42).unwrap()
    }

    fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    #[test]
    fn output_shape() {
        let w = tiny();
        let c = &w.config;
        let batch = vec![tokenize(c, "a b c", 16).unwrap(), tokenize(c, "d", 16).unwrap()];
        let out = forward(&w, &batch).unwrap();
        assert_eq!((out.batch, out.seq, out.hidden()), (2, 16, 32));
        assert_eq!(out.states.shape(), (32, 32));
    }

    #[test]
    fn csr_and_bsr_storage_agree_with_dense() {
        let w = tiny();
        let c = &w.config;
        let batch: Vec<_> = ["sparse encoders for retrieval", "one two three four five", "x"]
            .iter()
            .map(|t| tokenize(c, t, 12).unwrap())
            .collect();
        let dense = forward(&w, &batch).unwrap();
        for storage in [Storage::Csr, Storage::Bsr { block: BlockShape::ONE_BY_FOUR }] {
            let other = forward(&w.with_storage(storage).unwrap(), &batch).unwrap();
            assert!(max_abs_diff(dense.states.values(), other.states.values()) <= 1e-5);
        }
    }

    #[test]
    fn extra_padding_does_not_change_pooled_output() {
        let mut w = tiny();
        for mode in [Pooling::Cls, Pooling::Mean] {
            w.config.pooling = mode;
            let c = w.config.clone();
            let short = tokenize(&c, "padding must be invisible", 8).unwrap();
            let long = short.padded_to(24, c.pad_id).unwrap();
            let a = forward(&w, std::slice::from_ref(&short)).unwrap();
            let b = forward(&w, std::slice::from_ref(&long)).unwrap();
            let pa = pool(&a, &[short.attention_mask()], mode, true).unwrap();
            let pb = pool(&b, &[long.attention_mask()], mode, true).unwrap();
            assert!(max_abs_diff(pa.values(), pb.values()) <= 1e-5);
        }
    }

    #[test]
    fn pooling_modes() {
        let states = HiddenStates {
            batch: 1,
            seq: 3,
            states: DenseMatrix::new(3, 2, vec![3.0, 4.0, 1.0, 1.0, 9.0, 9.0]).unwrap(),
        };
        let cls = pool(&states, &[&[1, 1, 0]], Pooling::Cls, false).unwrap();
        assert_eq!(cls.values(), &[3.0, 4.0]);
        let mean = pool(&states, &[&[1, 1, 0]], Pooling::Mean, false).unwrap();
        assert_eq!(mean.values(), &[2.0, 2.5]);
        let norm = pool(&states, &[&[1, 1, 0]], Pooling::Cls, true).unwrap();
        assert_eq!(norm.values(), &[0.6, 0.8]);
        assert!(pool(&states, &[&[0, 0, 0]], Pooling::Mean, false).is_err());

        let same = HiddenStates {
            batch: 1,
            seq: 2,
            states: DenseMatrix::new(2, 2, vec![0.5, -1.0, 0.5, -1.0]).unwrap(),
        };
        assert_eq!(pool(&same, &[&[1, 1]], Pooling::Mean, false).unwrap().values(), &[0.5, -1.0]);
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let w = tiny();
        let e = encode(&w, &["alpha beta", "gamma", "delta epsilon zeta"], 32, 2).unwrap();
        for r in 0..e.rows() {
            let n: f32 = e.row(r).iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_size_and_padding_invariance() {
        let w = tiny();
        let texts = ["the first text", "second one is a little longer than the first", "3"];
        let one = encode(&w, &texts, 32, 1).unwrap();
        let all = encode(&w, &texts, 32, 3).unwrap();
        let padded = encode_with(
            &w,
            &texts,
            EncodeOptions {
                pad_to_max_len: true,
                ..EncodeOptions::new(32, 2)
            },
        )
        .unwrap();
        assert!(max_abs_diff(one.values(), all.values()) <= 1e-5);
        assert!(max_abs_diff(one.values(), padded.values()) <= 1e-5);
        let pair = encode(&w, &["the first text", "other"], 32, 2).unwrap();
        assert!(max_abs_diff(pair.row(0), one.row(0)) <= 1e-5);
    }

    #[test]
    fn identical_texts_identical_rows() {
        let w = tiny();
        let e = encode(&w, &["same words", "same words"], 32, 2).unwrap();
        assert_eq!(e.row(0), e.row(1));
    }

    #[test]
    fn rejects_bad_batches() {
        let w = tiny();
        assert!(forward(&w, &[]).is_err());
        let bad = TokenSequence::unpadded(vec![5, 6]).unwrap();
        assert!(forward(&w, &[bad]).is_err());
        assert!(encode(&w, &["x"], 32, 0).is_err());
    }
}
