use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

use super::autodiff::Params;
use super::train::{loss_and_grads, tokenize_example, Tokenized};
use super::{BiEncoder, TiedMode, TrainConfig, TrainExample};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Entries probed per tensor; larger tensors are sampled.
    pub max_entries_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_entries_per_tensor: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub probed: usize,
    /// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-7)` over the probed entries.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub analytic_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self, tol: f64) -> Vec<&TensorCheck> {
        self.tensors.iter().filter(|t| !(t.rel_error <= tol)).collect()
    }
}

/// Compares the reverse-mode gradient of the configured loss with central
/// finite differences, in `f64`, for every parameter tensor.
///
/// Token-embedding rows of ids absent from the batch must have an exactly zero
/// analytic gradient; only rows of ids present are probed numerically.
pub fn check_gradients(
    model: &BiEncoder,
    batch: &[TrainExample],
    config: &TrainConfig,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let cfg = model.query_encoder().config.clone();
    let tokens: Vec<Tokenized> = batch
        .iter()
        .map(|ex| tokenize_example(&cfg, config, ex))
        .collect::<Result<_>>()?;
    let refs: Vec<&Tokenized> = tokens.iter().collect();
    let used: BTreeSet<usize> = tokens
        .iter()
        .flat_map(|t| t.query.iter().chain(t.docs.iter().flatten()))
        .map(|id| *id as usize)
        .collect();

    let mut q: Params<f64> = Params::from_weights(model.query_encoder());
    let mut d: Option<Params<f64>> = match model.mode() {
        TiedMode::Tied => None,
        TiedMode::Untied => Some(Params::from_weights(model.doc_encoder())),
    };
    let (loss, grads) = loss_and_grads(&cfg, &q, d.as_ref(), &refs, config.loss_kind, true)?;
    let (gq, gd) = grads.expect("gradients requested");
    let eval = |q: &Params<f64>, d: Option<&Params<f64>>| -> Result<f64> {
        Ok(loss_and_grads(&cfg, q, d, &refs, config.loss_kind, false)?.0)
    };

    let h = opts.step;
    let hidden = cfg.hidden_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = Vec::new();
    let roles: &[(&str, bool)] = if d.is_some() {
        &[("query.", false), ("doc.", true)]
    } else {
        &[("", false)]
    };
    for &(prefix, is_doc) in roles {
        let grads = if is_doc { gd.as_ref().expect("untied gradients") } else { &gq };
        for (t, (name, analytic)) in grads.tensors().into_iter().enumerate() {
            let mut candidates: Vec<usize> = (0..analytic.len()).collect();
            let mut stray = false;
            if name == "embeddings.token" {
                candidates = used.iter().flat_map(|id| id * hidden..(id + 1) * hidden).collect();
                stray = analytic
                    .chunks_exact(hidden)
                    .enumerate()
                    .any(|(id, row)| !used.contains(&id) && row.iter().any(|g| *g != 0.0));
            }
            if candidates.len() > opts.max_entries_per_tensor {
                let picked = rand::seq::index::sample(&mut rng, candidates.len(), opts.max_entries_per_tensor);
                let mut sampled: Vec<usize> = picked.iter().map(|i| candidates[i]).collect();
                sampled.sort_unstable();
                candidates = sampled;
            }
            let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for &j in &candidates {
                let perturbed = |delta: f64, q: &mut Params<f64>, d: &mut Option<Params<f64>>| -> Result<f64> {
                    let target = if is_doc { d.as_mut().expect("doc params") } else { &mut *q };
                    let orig = target.tensors()[t].1[j];
                    target.tensors_mut()[t][j] = orig + delta;
                    let l = eval(q, d.as_ref());
                    let target = if is_doc { d.as_mut().expect("doc params") } else { &mut *q };
                    target.tensors_mut()[t][j] = orig;
                    l
                };
                let plus = perturbed(h, &mut q, &mut d)?;
                let minus = perturbed(-h, &mut q, &mut d)?;
                let numeric = (plus - minus) / (2.0 * h);
                let a = analytic[j];
                diff2 += (a - numeric) * (a - numeric);
                a2 += a * a;
                n2 += numeric * numeric;
                max_abs = max_abs.max((a - numeric).abs());
            }
            let rel = if stray {
                f64::INFINITY
            } else {
                diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-7)
            };
            report.push(TensorCheck {
                name: format!("{prefix}{name}"),
                probed: candidates.len(),
                rel_error: rel,
                max_abs_error: max_abs,
                analytic_norm: analytic.iter().map(|g| g * g).sum::<f64>().sqrt(),
            });
        }
    }
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite loss {loss} during gradient check")));
    }
    Ok(GradCheckReport { loss, tensors: report })
}
