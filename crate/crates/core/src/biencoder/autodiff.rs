//! Differentiable encoder for training.
//!
//! A token-major re-implementation of the inference forward pass that keeps
//! every intermediate it needs, plus a hand-written reverse pass. Generic over
//! [`Real`] so the same code trains in `f32` and is checked against finite
//! differences in `f64`. Sequences are processed one at a time and trimmed to
//! their non-padding length; padding never influences real positions, so
//! trimming changes nothing.

use crate::encoder::{EncoderConfig, EncoderWeights, LinearSlot, LinearWeight, Pooling};
use crate::error::{Error, Result};
use crate::kernels::{DenseMatrix, Real};

const SLOTS: usize = 6;

fn slot_index(slot: LinearSlot) -> usize {
    match slot {
        LinearSlot::Query => 0,
        LinearSlot::Key => 1,
        LinearSlot::Value => 2,
        LinearSlot::AttnOut => 3,
        LinearSlot::FfIn => 4,
        LinearSlot::FfOut => 5,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerParams<T> {
    /// Weights (`out × in`, row-major) in [`LinearSlot::ALL`] order.
    pub w: [Vec<T>; SLOTS],
    pub b: [Vec<T>; SLOTS],
    pub attn_ln_g: Vec<T>,
    pub attn_ln_b: Vec<T>,
    pub ffn_ln_g: Vec<T>,
    pub ffn_ln_b: Vec<T>,
}

/// Every trainable tensor of one encoder, as flat dense arrays.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params<T> {
    pub tok: Vec<T>,
    pub pos: Vec<T>,
    pub emb_ln_g: Vec<T>,
    pub emb_ln_b: Vec<T>,
    pub layers: Vec<LayerParams<T>>,
}

fn cast<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|x| T::from_f32(*x)).collect()
}

impl<T: Real> Params<T> {
    pub fn from_weights(w: &EncoderWeights) -> Self {
        let layers = w
            .layers
            .iter()
            .map(|layer| LayerParams {
                w: LinearSlot::ALL.map(|s| cast(layer.linear(s).weight.to_dense().values())),
                b: LinearSlot::ALL.map(|s| cast(&layer.linear(s).bias)),
                attn_ln_g: cast(&layer.attn_ln.gain),
                attn_ln_b: cast(&layer.attn_ln.bias),
                ffn_ln_g: cast(&layer.ffn_ln.gain),
                ffn_ln_b: cast(&layer.ffn_ln.bias),
            })
            .collect();
        Self {
            tok: cast(w.token_emb.values()),
            pos: cast(w.pos_emb.values()),
            emb_ln_g: cast(&w.emb_ln.gain),
            emb_ln_b: cast(&w.emb_ln.bias),
            layers,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |v: &Vec<T>| vec![T::zero(); v.len()];
        Self {
            tok: z(&self.tok),
            pos: z(&self.pos),
            emb_ln_g: z(&self.emb_ln_g),
            emb_ln_b: z(&self.emb_ln_b),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w: std::array::from_fn(|i| z(&l.w[i])),
                    b: std::array::from_fn(|i| z(&l.b[i])),
                    attn_ln_g: z(&l.attn_ln_g),
                    attn_ln_b: z(&l.attn_ln_b),
                    ffn_ln_g: z(&l.ffn_ln_g),
                    ffn_ln_b: z(&l.ffn_ln_b),
                })
                .collect(),
        }
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Vec<T>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), &self.tok),
            ("embeddings.position".to_string(), &self.pos),
            ("embeddings.ln.gain".to_string(), &self.emb_ln_g),
            ("embeddings.ln.bias".to_string(), &self.emb_ln_b),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for slot in LinearSlot::ALL {
                let i = slot_index(slot);
                out.push((format!("layers.{l}.{}.weight", slot.name()), &layer.w[i]));
                out.push((format!("layers.{l}.{}.bias", slot.name()), &layer.b[i]));
            }
            out.push((format!("layers.{l}.attn_ln.gain"), &layer.attn_ln_g));
            out.push((format!("layers.{l}.attn_ln.bias"), &layer.attn_ln_b));
            out.push((format!("layers.{l}.ffn_ln.gain"), &layer.ffn_ln_g));
            out.push((format!("layers.{l}.ffn_ln.bias"), &layer.ffn_ln_b));
        }
        out
    }

    /// Mutable tensors, same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = vec![&mut self.tok, &mut self.pos, &mut self.emb_ln_g, &mut self.emb_ln_b];
        for layer in &mut self.layers {
            let LayerParams {
                w,
                b,
                attn_ln_g,
                attn_ln_b,
                ffn_ln_g,
                ffn_ln_b,
            } = layer;
            for (wi, bi) in w.iter_mut().zip(b.iter_mut()) {
                out.push(wi);
                out.push(bi);
            }
            out.push(attn_ln_g);
            out.push(attn_ln_b);
            out.push(ffn_ln_g);
            out.push(ffn_ln_b);
        }
        out
    }

    pub fn weight_mut(&mut self, layer: usize, slot: LinearSlot) -> &mut Vec<T> {
        &mut self.layers[layer].w[slot_index(slot)]
    }
}

impl Params<f32> {
    /// Copies values back into `w`, storing every matrix dense. The profile is
    /// left untouched.
    pub fn write_to(&self, w: &mut EncoderWeights) -> Result<()> {
        let c = w.config.clone();
        let h = c.hidden_dim;
        w.token_emb = DenseMatrix::new(c.vocab_size, h, self.tok.clone())?;
        w.pos_emb = DenseMatrix::new(c.max_seq_len, h, self.pos.clone())?;
        w.emb_ln.gain.clone_from(&self.emb_ln_g);
        w.emb_ln.bias.clone_from(&self.emb_ln_b);
        for (layer, p) in w.layers.iter_mut().zip(&self.layers) {
            for slot in LinearSlot::ALL {
                let (o, i) = slot.shape(&c);
                let lin = layer.linear_mut(slot);
                lin.weight = LinearWeight::Dense(DenseMatrix::new(o, i, p.w[slot_index(slot)].clone())?);
                lin.bias.clone_from(&p.b[slot_index(slot)]);
            }
            layer.attn_ln.gain.clone_from(&p.attn_ln_g);
            layer.attn_ln.bias.clone_from(&p.attn_ln_b);
            layer.ffn_ln.gain.clone_from(&p.ffn_ln_g);
            layer.ffn_ln.bias.clone_from(&p.ffn_ln_b);
        }
        Ok(())
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

#[inline]
fn axpy<T: Real>(a: T, x: &[T], out: &mut [T]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o = *o + a * *v;
    }
}

/// `y[i] = W x[i] + b` for each of the `rows` input rows.
fn linear_fwd<T: Real>(x: &[T], w: &[T], b: &[T], in_dim: usize) -> Vec<T> {
    let out_dim = b.len();
    let rows = x.len() / in_dim;
    let mut y = Vec::with_capacity(rows * out_dim);
    for xi in x.chunks_exact(in_dim) {
        for (wo, bo) in w.chunks_exact(in_dim).zip(b) {
            y.push(dot(xi, wo) + *bo);
        }
    }
    y
}

/// Accumulates weight/bias gradients and returns the input gradient.
fn linear_bwd<T: Real>(dy: &[T], x: &[T], w: &[T], in_dim: usize, dw: &mut [T], db: &mut [T]) -> Vec<T> {
    let out_dim = db.len();
    let mut dx = vec![T::zero(); x.len()];
    for ((dyi, xi), dxi) in dy
        .chunks_exact(out_dim)
        .zip(x.chunks_exact(in_dim))
        .zip(dx.chunks_exact_mut(in_dim))
    {
        for (o, &g) in dyi.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            db[o] = db[o] + g;
            axpy(g, xi, &mut dw[o * in_dim..(o + 1) * in_dim]);
            axpy(g, &w[o * in_dim..(o + 1) * in_dim], dxi);
        }
    }
    dx
}

struct LnCache<T> {
    xhat: Vec<T>,
    inv: Vec<T>,
}

fn ln_fwd<T: Real>(x: &[T], g: &[T], b: &[T], eps: T) -> (Vec<T>, LnCache<T>) {
    let n = g.len();
    let nf = T::from_usize(n);
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv = Vec::with_capacity(x.len() / n);
    for row in x.chunks_exact(n) {
        let mean = row.iter().copied().sum::<T>() / nf;
        let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / nf;
        let i = T::one() / (var + eps).sqrt();
        for ((v, gg), bb) in row.iter().zip(g).zip(b) {
            let xh = (*v - mean) * i;
            xhat.push(xh);
            y.push(xh * *gg + *bb);
        }
        inv.push(i);
    }
    (y, LnCache { xhat, inv })
}

fn ln_bwd<T: Real>(dy: &[T], cache: &LnCache<T>, g: &[T], dg: &mut [T], db: &mut [T]) -> Vec<T> {
    let n = g.len();
    let nf = T::from_usize(n);
    let mut dx = Vec::with_capacity(dy.len());
    let mut dxhat = vec![T::zero(); n];
    for ((dyr, xh), inv) in dy.chunks_exact(n).zip(cache.xhat.chunks_exact(n)).zip(&cache.inv) {
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..n {
            dg[j] = dg[j] + dyr[j] * xh[j];
            db[j] = db[j] + dyr[j];
            dxhat[j] = dyr[j] * g[j];
            mean_d = mean_d + dxhat[j];
            mean_dx = mean_dx + dxhat[j] * xh[j];
        }
        mean_d = mean_d / nf;
        mean_dx = mean_dx / nf;
        for j in 0..n {
            dx.push(*inv * (dxhat[j] - mean_d - xh[j] * mean_dx));
        }
    }
    dx
}

fn gelu<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(0.398_942_280_401_432_7);
    cdf + x * pdf
}

fn softmax<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

struct LayerCache<T> {
    x_in: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads × L × L` attention weights.
    probs: Vec<T>,
    ctx: Vec<T>,
    ln1: LnCache<T>,
    a: Vec<T>,
    f_pre: Vec<T>,
    f_act: Vec<T>,
    ln2: LnCache<T>,
}

/// Everything the reverse pass needs for one sequence.
pub(crate) struct SeqCache<T> {
    ids: Vec<u32>,
    emb_ln: LnCache<T>,
    layers: Vec<LayerCache<T>>,
    pooled: Vec<T>,
    norm: T,
    pub embedding: Vec<T>,
}

fn attention_fwd<T: Real>(cfg: &EncoderConfig, q: &[T], k: &[T], v: &[T], len: usize) -> (Vec<T>, Vec<T>) {
    let h = cfg.hidden_dim;
    let dh = cfg.head_dim();
    let scale = T::one() / T::from_usize(dh).sqrt();
    let mut probs = vec![T::zero(); cfg.num_heads * len * len];
    let mut ctx = vec![T::zero(); len * h];
    for head in 0..cfg.num_heads {
        let off = head * dh;
        for i in 0..len {
            let qi = &q[i * h + off..i * h + off + dh];
            let row = &mut probs[(head * len + i) * len..(head * len + i + 1) * len];
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(qi, &k[j * h + off..j * h + off + dh]) * scale;
            }
            softmax(row);
            let out = &mut ctx[i * h + off..i * h + off + dh];
            for (j, &p) in row.iter().enumerate() {
                axpy(p, &v[j * h + off..j * h + off + dh], out);
            }
        }
    }
    (probs, ctx)
}

/// Returns `(dq, dk, dv)`.
fn attention_bwd<T: Real>(
    cfg: &EncoderConfig,
    d_ctx: &[T],
    c: &LayerCache<T>,
    len: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let h = cfg.hidden_dim;
    let dh = cfg.head_dim();
    let scale = T::one() / T::from_usize(dh).sqrt();
    let mut dq = vec![T::zero(); len * h];
    let mut dk = vec![T::zero(); len * h];
    let mut dv = vec![T::zero(); len * h];
    let mut dp = vec![T::zero(); len];
    for head in 0..cfg.num_heads {
        let off = head * dh;
        for i in 0..len {
            let p = &c.probs[(head * len + i) * len..(head * len + i + 1) * len];
            let dci = &d_ctx[i * h + off..i * h + off + dh];
            for j in 0..len {
                dp[j] = dot(dci, &c.v[j * h + off..j * h + off + dh]);
                axpy(p[j], dci, &mut dv[j * h + off..j * h + off + dh]);
            }
            let weighted = dot(p, &dp);
            for j in 0..len {
                let ds = p[j] * (dp[j] - weighted) * scale;
                if ds == T::zero() {
                    continue;
                }
                axpy(ds, &c.k[j * h + off..j * h + off + dh], &mut dq[i * h + off..i * h + off + dh]);
                axpy(ds, &c.q[i * h + off..i * h + off + dh], &mut dk[j * h + off..j * h + off + dh]);
            }
        }
    }
    (dq, dk, dv)
}

/// Forward over one unpadded sequence.
pub(crate) fn forward_seq<T: Real>(cfg: &EncoderConfig, p: &Params<T>, ids: &[u32]) -> SeqCache<T> {
    let h = cfg.hidden_dim;
    let f = cfg.ff_dim;
    let len = ids.len();
    let eps = T::from_f32(cfg.layer_norm_eps);
    let mut x = Vec::with_capacity(len * h);
    for (pos, &id) in ids.iter().enumerate() {
        let id = id as usize;
        for r in 0..h {
            x.push(p.tok[id * h + r] + p.pos[pos * h + r]);
        }
    }
    let (mut x, emb_ln) = ln_fwd(&x, &p.emb_ln_g, &p.emb_ln_b, eps);
    let mut layers = Vec::with_capacity(p.layers.len());
    for lp in &p.layers {
        let q = linear_fwd(&x, &lp.w[0], &lp.b[0], h);
        let k = linear_fwd(&x, &lp.w[1], &lp.b[1], h);
        let v = linear_fwd(&x, &lp.w[2], &lp.b[2], h);
        let (probs, ctx) = attention_fwd(cfg, &q, &k, &v, len);
        let mut z = linear_fwd(&ctx, &lp.w[3], &lp.b[3], h);
        for (zi, xi) in z.iter_mut().zip(&x) {
            *zi = *zi + *xi;
        }
        let (a, ln1) = ln_fwd(&z, &lp.attn_ln_g, &lp.attn_ln_b, eps);
        let f_pre = linear_fwd(&a, &lp.w[4], &lp.b[4], h);
        let f_act: Vec<T> = f_pre.iter().map(|v| gelu(*v)).collect();
        let mut z2 = linear_fwd(&f_act, &lp.w[5], &lp.b[5], f);
        for (zi, ai) in z2.iter_mut().zip(&a) {
            *zi = *zi + *ai;
        }
        let (out, ln2) = ln_fwd(&z2, &lp.ffn_ln_g, &lp.ffn_ln_b, eps);
        layers.push(LayerCache {
            x_in: std::mem::replace(&mut x, out),
            q,
            k,
            v,
            probs,
            ctx,
            ln1,
            a,
            f_pre,
            f_act,
            ln2,
        });
    }
    let pooled = match cfg.pooling {
        Pooling::Cls => x[..h].to_vec(),
        Pooling::Mean => {
            let mut acc = vec![T::zero(); h];
            for row in x.chunks_exact(h) {
                axpy(T::one(), row, &mut acc);
            }
            let n = T::from_usize(len);
            acc.iter_mut().for_each(|v| *v = *v / n);
            acc
        }
    };
    let (embedding, norm) = if cfg.normalize_embeddings {
        let norm = dot(&pooled, &pooled).sqrt();
        (pooled.iter().map(|v| *v / norm).collect(), norm)
    } else {
        (pooled.clone(), T::one())
    };
    SeqCache {
        ids: ids.to_vec(),
        emb_ln,
        layers,
        pooled,
        norm,
        embedding,
    }
}

/// Reverse pass for one sequence, accumulating into `grads`.
pub(crate) fn backward_seq<T: Real>(
    cfg: &EncoderConfig,
    p: &Params<T>,
    cache: &SeqCache<T>,
    d_embedding: &[T],
    grads: &mut Params<T>,
) {
    let h = cfg.hidden_dim;
    let f = cfg.ff_dim;
    let len = cache.ids.len();

    let d_pooled: Vec<T> = if cfg.normalize_embeddings {
        let y = &cache.embedding;
        let proj = dot(y, d_embedding);
        d_embedding
            .iter()
            .zip(y)
            .map(|(g, yy)| (*g - *yy * proj) / cache.norm)
            .collect()
    } else {
        d_embedding.to_vec()
    };
    let _ = &cache.pooled;
    let mut dx = vec![T::zero(); len * h];
    match cfg.pooling {
        Pooling::Cls => dx[..h].copy_from_slice(&d_pooled),
        Pooling::Mean => {
            let n = T::from_usize(len);
            for row in dx.chunks_exact_mut(h) {
                for (d, g) in row.iter_mut().zip(&d_pooled) {
                    *d = *g / n;
                }
            }
        }
    }

    for (l, (lp, c)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
        let gl = &mut grads.layers[l];
        // out = LN2(a + ff_out(gelu(ff_in(a))))
        let dz2 = ln_bwd(&dx, &c.ln2, &lp.ffn_ln_g, &mut gl.ffn_ln_g, &mut gl.ffn_ln_b);
        let (gw, gb) = (&mut gl.w, &mut gl.b);
        let d_act = linear_bwd(&dz2, &c.f_act, &lp.w[5], f, &mut gw[5], &mut gb[5]);
        let d_pre: Vec<T> = d_act.iter().zip(&c.f_pre).map(|(g, x)| *g * gelu_grad(*x)).collect();
        let mut da = linear_bwd(&d_pre, &c.a, &lp.w[4], h, &mut gw[4], &mut gb[4]);
        for (d, r) in da.iter_mut().zip(&dz2) {
            *d = *d + *r;
        }
        // a = LN1(x_in + attn_out(ctx))
        let dz1 = ln_bwd(&da, &c.ln1, &lp.attn_ln_g, &mut gl.attn_ln_g, &mut gl.attn_ln_b);
        let (gw, gb) = (&mut gl.w, &mut gl.b);
        let d_ctx = linear_bwd(&dz1, &c.ctx, &lp.w[3], h, &mut gw[3], &mut gb[3]);
        let (dq, dk, dv) = attention_bwd(cfg, &d_ctx, c, len);
        let mut d_in = dz1;
        for (slot, dy) in [(0, &dq), (1, &dk), (2, &dv)] {
            let part = linear_bwd(dy, &c.x_in, &lp.w[slot], h, &mut gw[slot], &mut gb[slot]);
            for (d, v) in d_in.iter_mut().zip(&part) {
                *d = *d + *v;
            }
        }
        dx = d_in;
    }

    let d_emb = ln_bwd(&dx, &cache.emb_ln, &p.emb_ln_g, &mut grads.emb_ln_g, &mut grads.emb_ln_b);
    for (pos, (&id, g)) in cache.ids.iter().zip(d_emb.chunks_exact(h)).enumerate() {
        let id = id as usize;
        axpy(T::one(), g, &mut grads.tok[id * h..(id + 1) * h]);
        axpy(T::one(), g, &mut grads.pos[pos * h..(pos + 1) * h]);
    }
}

/// Cosine distance `1 − x·y / (|x||y|)` with gradients in both arguments.
pub(crate) fn cosine_pair<T: Real>(x: &[T], y: &[T]) -> Result<(T, Vec<T>, Vec<T>)> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::dims("cosine_distance_loss", x.len(), y.len()));
    }
    let nx = dot(x, x).sqrt();
    let ny = dot(y, y).sqrt();
    if nx == T::zero() || ny == T::zero() {
        return Err(Error::invalid("cosine distance of a zero-norm vector"));
    }
    let xy = dot(x, y);
    let cos = xy / (nx * ny);
    let dx = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| -(*yi / (nx * ny) - cos * *xi / (nx * nx)))
        .collect();
    let dy = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| -(*xi / (nx * ny) - cos * *yi / (ny * ny)))
        .collect();
    Ok((T::one() - cos, dx, dy))
}

/// Mean over queries of `−log softmax_j(q_i · d_j)[i]`: query `i`'s positive
/// is document `i`; every other document in the batch is a negative.
pub(crate) fn inbatch_softmax<T: Real>(
    queries: &[Vec<T>],
    docs: &[Vec<T>],
) -> Result<(T, Vec<Vec<T>>, Vec<Vec<T>>)> {
    if queries.is_empty() || docs.len() < queries.len() {
        return Err(Error::dims(
            "inbatch_softmax_loss",
            format!("at least {} documents", queries.len()),
            docs.len(),
        ));
    }
    let dim = queries[0].len();
    if queries.iter().chain(docs).any(|v| v.len() != dim) {
        return Err(Error::dims("inbatch_softmax_loss", dim, "ragged embeddings"));
    }
    let nq = T::from_usize(queries.len());
    let mut loss = T::zero();
    let mut dq = vec![vec![T::zero(); dim]; queries.len()];
    let mut dd = vec![vec![T::zero(); dim]; docs.len()];
    let mut logits = vec![T::zero(); docs.len()];
    for (i, q) in queries.iter().enumerate() {
        for (s, d) in logits.iter_mut().zip(docs) {
            *s = dot(q, d);
        }
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + logits.iter().map(|s| (*s - max).exp()).sum::<T>().ln();
        loss = loss + (lse - logits[i]);
        for (j, d) in docs.iter().enumerate() {
            let mut g = (logits[j] - lse).exp();
            if j == i {
                g = g - T::one();
            }
            let g = g / nq;
            axpy(g, d, &mut dq[i]);
            axpy(g, q, &mut dd[j]);
        }
    }
    Ok((loss / nq, dq, dd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode, tokenize, EncoderConfig};

    #[test]
    fn f32_training_forward_matches_inference() {
        let mut w = EncoderWeights::init(EncoderConfig::tiny(), 17).unwrap();
        for pooling in [Pooling::Cls, Pooling::Mean] {
            w.config.pooling = pooling;
            let p = Params::<f32>::from_weights(&w);
            for text in ["a quick check of the training forward", "x"] {
                let seq = tokenize(&w.config, text, 32).unwrap();
                let cache = forward_seq(&w.config, &p, &seq.ids()[..seq.valid_len()]);
                let inf = encode(&w, &[text], 32, 1).unwrap();
                for (a, b) in cache.embedding.iter().zip(inf.row(0)) {
                    assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn write_back_round_trips() {
        let w = EncoderWeights::init(EncoderConfig::tiny(), 3).unwrap();
        let p = Params::<f32>::from_weights(&w);
        let mut w2 = EncoderWeights::init(EncoderConfig::tiny(), 4).unwrap();
        p.write_to(&mut w2).unwrap();
        assert_eq!(w2, w);
        assert_eq!(p.tensors().len(), p.zeros_like().tensors().len());
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for x in [-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
