use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{parse_matrix_name, tokenize, EncoderConfig, EncoderWeights, LinearSlot, Storage};
use crate::error::{Error, Result};
use crate::kernels::Real;
use crate::sparsity::frozen_keep_masks;

use super::autodiff::{backward_seq, cosine_pair, forward_seq, inbatch_softmax, Params};
use super::{BiEncoder, LossKind, TiedMode, TrainConfig, TrainExample};

/// Token ids of one example, trimmed to their non-padding length. `docs[0]`
/// is the positive.
#[derive(Debug, Clone)]
pub(crate) struct Tokenized {
    pub query: Vec<u32>,
    pub docs: Vec<Vec<u32>>,
}

pub(crate) fn tokenize_example(cfg: &EncoderConfig, tc: &TrainConfig, ex: &TrainExample) -> Result<Tokenized> {
    let trim = |text: &str, max_len: usize| -> Result<Vec<u32>> {
        let seq = tokenize(cfg, text, max_len.min(cfg.max_seq_len))?;
        Ok(seq.ids()[..seq.valid_len()].to_vec())
    };
    let mut docs = vec![trim(&ex.positive, tc.doc_max_len)?];
    for neg in ex.negatives.iter().take(tc.negatives_per_query) {
        docs.push(trim(neg, tc.doc_max_len)?);
    }
    Ok(Tokenized {
        query: trim(&ex.query, tc.query_max_len)?,
        docs,
    })
}

pub(crate) type Grads<T> = (Params<T>, Option<Params<T>>);

/// Batch loss and, if requested, gradients for the query parameters and (when
/// untied) the document parameters. Tied callers pass `doc = None`; both
/// roles then accumulate into the single gradient set.
pub(crate) fn loss_and_grads<T: Real>(
    cfg: &EncoderConfig,
    query: &Params<T>,
    doc: Option<&Params<T>>,
    batch: &[&Tokenized],
    loss_kind: LossKind,
    want_grads: bool,
) -> Result<(T, Option<Grads<T>>)> {
    if batch.is_empty() {
        return Err(Error::invalid("training batch is empty"));
    }
    let dp = doc.unwrap_or(query);
    let mut doc_ids: Vec<&[u32]> = batch.iter().map(|b| b.docs[0].as_slice()).collect();
    if loss_kind == LossKind::InBatchSoftmax {
        doc_ids.extend(batch.iter().flat_map(|b| b.docs[1..].iter().map(Vec::as_slice)));
    }
    let qc: Vec<_> = batch.iter().map(|b| forward_seq(cfg, query, &b.query)).collect();
    let dc: Vec<_> = doc_ids.iter().map(|ids| forward_seq(cfg, dp, ids)).collect();
    let q_emb: Vec<Vec<T>> = qc.iter().map(|c| c.embedding.clone()).collect();
    let d_emb: Vec<Vec<T>> = dc.iter().map(|c| c.embedding.clone()).collect();

    let (loss, dq, dd) = match loss_kind {
        LossKind::InBatchSoftmax => inbatch_softmax(&q_emb, &d_emb)?,
        LossKind::CosinePair => {
            let n = T::from_usize(batch.len());
            let mut total = T::zero();
            let mut dq = Vec::with_capacity(batch.len());
            let mut dd = Vec::with_capacity(batch.len());
            for (q, d) in q_emb.iter().zip(&d_emb) {
                let (l, gq, gd) = cosine_pair(q, d)?;
                total = total + l;
                dq.push(gq.into_iter().map(|g| g / n).collect());
                dd.push(gd.into_iter().map(|g| g / n).collect());
            }
            (total / n, dq, dd)
        }
    };
    if !want_grads {
        return Ok((loss, None));
    }
    let mut gq = query.zeros_like();
    let mut gd = doc.map(Params::zeros_like);
    for (c, g) in qc.iter().zip(&dq) {
        backward_seq(cfg, query, c, g, &mut gq);
    }
    for (c, g) in dc.iter().zip(&dd) {
        let target = match gd.as_mut() {
            Some(g) => g,
            None => &mut gq,
        };
        backward_seq(cfg, dp, c, g, target);
    }
    Ok((loss, Some((gq, gd))))
}

struct FrozenMask {
    layer: usize,
    slot: LinearSlot,
    keep: Vec<bool>,
}

fn masks_of(w: &EncoderWeights) -> Result<Vec<FrozenMask>> {
    let Some(masks) = frozen_keep_masks(w) else {
        return Ok(Vec::new());
    };
    masks
        .into_iter()
        .map(|(name, keep)| {
            let (layer, slot) = parse_matrix_name(&name)
                .ok_or_else(|| Error::invalid(format!("profile names unknown matrix '{name}'")))?;
            Ok(FrozenMask { layer, slot, keep })
        })
        .collect()
}

fn rezero(p: &mut Params<f32>, masks: &[FrozenMask]) {
    for m in masks {
        for (v, k) in p.weight_mut(m.layer, m.slot).iter_mut().zip(&m.keep) {
            if !*k {
                *v = 0.0;
            }
        }
    }
}

fn sgd(p: &mut Params<f32>, g: &Params<f32>, lr: f32) {
    for (dst, (_, src)) in p.tensors_mut().into_iter().zip(g.tensors()) {
        for (v, d) in dst.iter_mut().zip(src) {
            *v -= lr * *d;
        }
    }
}

/// Writes `p` into a copy of `template`, then restores the template's
/// per-matrix storage.
fn materialize(template: &EncoderWeights, p: &Params<f32>) -> Result<EncoderWeights> {
    let mut w = template.clone();
    p.write_to(&mut w)?;
    for (layer, orig) in w.layers.iter_mut().zip(&template.layers) {
        for slot in LinearSlot::ALL {
            let storage = orig.linear(slot).weight.storage();
            if storage != Storage::Dense {
                let lin = layer.linear_mut(slot);
                lin.weight = lin.weight.convert(storage)?;
            }
        }
    }
    Ok(w)
}

/// Mutable training state over one bi-encoder.
pub struct Trainer {
    config: TrainConfig,
    enc: EncoderConfig,
    query: Params<f32>,
    doc: Option<Params<f32>>,
    query_masks: Vec<FrozenMask>,
    doc_masks: Vec<FrozenMask>,
    query_template: EncoderWeights,
    doc_template: Option<EncoderWeights>,
}

impl Trainer {
    pub fn new(model: &BiEncoder, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let qw = model.query_encoder();
        let doc_template = match model.mode() {
            TiedMode::Tied => None,
            TiedMode::Untied => Some(model.doc_encoder().clone()),
        };
        Ok(Self {
            config: config.clone(),
            enc: qw.config.clone(),
            query: Params::from_weights(qw),
            doc: doc_template.as_ref().map(Params::from_weights),
            query_masks: masks_of(qw)?,
            doc_masks: match &doc_template {
                Some(d) => masks_of(d)?,
                None => Vec::new(),
            },
            query_template: qw.clone(),
            doc_template,
        })
    }

    pub(crate) fn tokenize(&self, examples: &[TrainExample]) -> Result<Vec<Tokenized>> {
        examples
            .iter()
            .map(|ex| tokenize_example(&self.enc, &self.config, ex))
            .collect()
    }

    /// One SGD step at learning rate `lr`; returns the pre-update loss.
    pub fn step(&mut self, batch: &[TrainExample], lr: f32) -> Result<f32> {
        let tokens = self.tokenize(batch)?;
        let refs: Vec<&Tokenized> = tokens.iter().collect();
        self.step_tokenized(&refs, lr)
    }

    pub(crate) fn step_tokenized(&mut self, batch: &[&Tokenized], lr: f32) -> Result<f32> {
        let (loss, grads) = loss_and_grads(
            &self.enc,
            &self.query,
            self.doc.as_ref(),
            batch,
            self.config.loss_kind,
            true,
        )?;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {loss} at learning rate {lr} on a batch of {}",
                batch.len()
            )));
        }
        let (gq, gd) = grads.expect("gradients requested");
        sgd(&mut self.query, &gq, lr);
        rezero(&mut self.query, &self.query_masks);
        if let (Some(d), Some(g)) = (self.doc.as_mut(), gd.as_ref()) {
            sgd(d, g, lr);
            rezero(d, &self.doc_masks);
        }
        Ok(loss)
    }

    /// Current weights as a bi-encoder.
    pub fn model(&self) -> Result<BiEncoder> {
        let q = materialize(&self.query_template, &self.query)?;
        match (&self.doc_template, &self.doc) {
            (Some(t), Some(p)) => BiEncoder::untied(q, materialize(t, p)?),
            _ => Ok(BiEncoder::Tied(q)),
        }
    }
}

/// One SGD step at the configured initial learning rate.
pub fn train_step(model: &mut BiEncoder, batch: &[TrainExample], config: &TrainConfig) -> Result<f32> {
    let mut trainer = Trainer::new(model, config)?;
    let loss = trainer.step(batch, config.learning_rate)?;
    *model = trainer.model()?;
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BiEncoder,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub step_losses: Vec<f32>,
}

/// `epochs × ceil(n / batch_size)` steps over a seeded shuffle, with the
/// learning rate decaying linearly to zero across all of them.
pub fn train(dataset: &[TrainExample], config: &TrainConfig, model: BiEncoder) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let mut trainer = Trainer::new(&model, config)?;
    let tokens = trainer.tokenize(dataset)?;
    let steps_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total = (config.epochs * steps_per_epoch).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::with_capacity(total);
    let mut t = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0f64;
        for chunk in order.chunks(config.batch_size) {
            let lr = config.learning_rate * (1.0 - t as f32 / total as f32);
            let batch: Vec<&Tokenized> = chunk.iter().map(|i| &tokens[*i]).collect();
            let loss = trainer
                .step_tokenized(&batch, lr)
                .map_err(|e| Error::Training(format!("epoch {epoch}, step {t}: {e}")))?;
            sum += loss as f64;
            step_losses.push(loss);
            t += 1;
        }
        let mean = sum / steps_per_epoch as f64;
        log::info!("epoch {} mean loss {:.6}", epoch + 1, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome {
        model: trainer.model()?,
        epoch_losses,
        step_losses,
    })
}
