//! Teacher-forced training with AdamW, warmup-then-linear-decay learning
//! rate and gradient accumulation.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DecoderModel, Real};
use crate::error::{Error, Result};
use crate::tokenizer::{BOS, EOS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            peak_lr: 6e-5,
            warmup_fraction: 0.25,
            weight_decay: 0.01,
            batch_size: 24,
            grad_accum_steps: 3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.grad_accum_steps == 0 {
            return Err(Error::Config(
                "epochs, batch_size and grad_accum_steps must be positive".into(),
            ));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(Error::Config(format!("peak_lr {} must be positive", self.peak_lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction {} outside [0, 1]",
                self.warmup_fraction
            )));
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid AdamW hyperparameters".into()));
        }
        Ok(())
    }
}

/// Optimizer updates over the whole run for `n_examples` training sequences.
pub fn total_updates(n_examples: usize, cfg: &TrainConfig) -> usize {
    let batches = n_examples.div_ceil(cfg.batch_size);
    cfg.epochs * batches.div_ceil(cfg.grad_accum_steps)
}

/// Learning rate of the `step`-th update (1-based) out of `total`: linear
/// warmup to the peak, then linear decay to zero.
pub fn lr_at(step: usize, total: usize, cfg: &TrainConfig) -> f64 {
    let warm = (cfg.warmup_fraction * total as f64).round() as usize;
    if step <= warm {
        cfg.peak_lr * step as f64 / warm as f64
    } else if step >= total {
        0.0
    } else {
        cfg.peak_lr * (total - step) as f64 / (total - warm) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub id: String,
    pub context: Vec<f32>,
    /// Clause token ids without BOS or EOS.
    pub target: Vec<u32>,
}

/// Decoder input `[BOS] + target` and labels `target + [EOS]`.
pub fn teacher_forcing(target: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let mut input = Vec::with_capacity(target.len() + 1);
    input.push(BOS);
    input.extend_from_slice(target);
    let mut labels = target.to_vec();
    labels.push(EOS);
    (input, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Token-mean training loss of the initial weights, without dropout.
    pub initial_loss: f64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub updates: usize,
    /// Examples skipped because BOS/EOS framing exceeds `max_len`.
    pub dropped: usize,
}

struct Seq<F> {
    input: Vec<u32>,
    labels: Vec<u32>,
    context: Vec<F>,
}

fn prepare<F: Real>(examples: &[TrainExample], max_len: usize, context_dim: usize) -> Result<(Vec<Seq<F>>, usize)> {
    let mut out = Vec::with_capacity(examples.len());
    let mut dropped = 0;
    for ex in examples {
        if ex.context.len() != context_dim {
            return Err(Error::Config(format!(
                "example {} has a {}-wide context but the decoder expects {}",
                ex.id,
                ex.context.len(),
                context_dim
            )));
        }
        if ex.target.len() + 1 > max_len {
            dropped += 1;
            continue;
        }
        let (input, labels) = teacher_forcing(&ex.target);
        out.push(Seq {
            input,
            labels,
            context: ex.context.iter().map(|&v| F::lit(v as f64)).collect(),
        });
    }
    Ok((out, dropped))
}

fn mean_loss<F: Real>(model: &DecoderModel<F>, seqs: &[Seq<F>]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0;
    for s in seqs {
        let (sum, n) = model.loss(&s.input, &s.labels, &s.context)?;
        total += sum.to_f64().unwrap_or(f64::NAN);
        tokens += n;
    }
    Ok(total / tokens.max(1) as f64)
}

struct AdamW<F> {
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
    decayed: Vec<Range<usize>>,
}

impl<F: Real> AdamW<F> {
    fn new(model: &DecoderModel<F>) -> Self {
        let decayed = model
            .layout()
            .entries()
            .iter()
            .filter(|e| e.shape.len() == 2)
            .map(|e| e.offset..e.offset + e.len())
            .collect();
        AdamW {
            m: vec![F::zero(); model.num_params()],
            v: vec![F::zero(); model.num_params()],
            t: 0,
            decayed,
        }
    }

    fn update(&mut self, params: &mut [F], grad: &[F], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let shrink = F::lit(1.0 - lr * cfg.weight_decay);
        for r in &self.decayed {
            params[r.clone()].iter_mut().for_each(|p| *p *= shrink);
        }
        let (b1, b2) = (F::lit(cfg.beta1), F::lit(cfg.beta2));
        let (one_b1, one_b2) = (F::lit(1.0 - cfg.beta1), F::lit(1.0 - cfg.beta2));
        let step = F::lit(lr / (1.0 - cfg.beta1.powi(self.t)));
        let bc2 = F::lit(1.0 - cfg.beta2.powi(self.t));
        let eps = F::lit(cfg.adam_eps);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *p -= step * *m / ((*v / bc2).sqrt() + eps);
        }
    }
}

/// Trains in place and leaves the model holding the parameters with the best
/// validation loss (training loss when `valid` is empty).
pub fn train<F: Real>(
    model: &mut DecoderModel<F>,
    train: &[TrainExample],
    valid: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let max_len = model.config().max_len;
    let cdim = model.config().context_dim;
    let (train_seqs, dropped) = prepare::<F>(train, max_len, cdim)?;
    let (valid_seqs, dropped_valid) = prepare::<F>(valid, max_len, cdim)?;
    if dropped + dropped_valid > 0 {
        log::warn!(
            "dropped {dropped} training and {dropped_valid} validation targets longer than max_len {max_len}"
        );
    }
    if train_seqs.is_empty() {
        return Err(Error::Config("no training examples fit within max_len".into()));
    }

    let total = total_updates(train_seqs.len(), cfg);
    let mut opt = AdamW::new(model);
    let mut grad = vec![F::zero(); model.num_params()];
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d80b);

    let initial_loss = mean_loss(model, &train_seqs)?;
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = model.params().to_vec();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut updates = 0;
    let mut lr = 0.0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let mut epoch_nll = 0.0;
        let mut epoch_tokens = 0;
        for group in batches.chunks(cfg.grad_accum_steps) {
            grad.iter_mut().for_each(|g| *g = F::zero());
            for batch in group {
                let tokens: usize = batch.iter().map(|&i| train_seqs[i].labels.len()).sum();
                let scale = F::lit(1.0 / (tokens * group.len()) as f64);
                let mut batch_nll = 0.0;
                for &i in *batch {
                    let s = &train_seqs[i];
                    let (sum, _) = model.loss_and_grad(
                        &s.input,
                        &s.labels,
                        &s.context,
                        scale,
                        &mut grad,
                        Some(&mut dropout_rng),
                    )?;
                    batch_nll += sum.to_f64().unwrap_or(f64::NAN);
                }
                if !batch_nll.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step: updates + 1,
                        detail: format!("batch loss {batch_nll} over {tokens} tokens at lr {lr:.3e}"),
                    });
                }
                epoch_nll += batch_nll;
                epoch_tokens += tokens;
            }
            updates += 1;
            lr = lr_at(updates, total, cfg);
            opt.update(model.params_mut(), &grad, lr, cfg);
        }

        let train_loss = epoch_nll / epoch_tokens as f64;
        let valid_loss = if valid_seqs.is_empty() {
            None
        } else {
            Some(mean_loss(model, &valid_seqs)?)
        };
        let tracked = valid_loss.unwrap_or(train_loss);
        if !tracked.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: updates,
                detail: format!("epoch loss {tracked}"),
            });
        }
        match valid_loss {
            Some(v) => log::info!("epoch {epoch}: train {train_loss:.4} valid {v:.4} lr {lr:.3e}"),
            None => log::info!("epoch {epoch}: train {train_loss:.4} lr {lr:.3e}"),
        }
        if tracked < best_loss {
            best_loss = tracked;
            best_epoch = epoch;
            best_params.copy_from_slice(model.params());
        }
        epochs.push(EpochLog {
            epoch,
            train_loss,
            valid_loss,
            lr,
        });
    }
    model.params_mut().copy_from_slice(&best_params);
    Ok(TrainReport {
        initial_loss,
        epochs,
        best_epoch,
        best_loss,
        updates,
        dropped: dropped + dropped_valid,
    })
}
