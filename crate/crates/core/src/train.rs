//! Loss and the training loop.
//!
//! Training uses only seen-category samples. Each minibatch runs one
//! independent forward/backward graph per sample in parallel; gradients are
//! summed in sample order so the result does not depend on scheduling. The
//! optimizer is SGD with heavy-ball momentum and an optional cosine decay of
//! the learning rate over all steps.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Optimizer, TrainConfig};
use crate::data::{Sample, Split};
use crate::error::{Error, Result};
use crate::head::{encode_targets, GraspMaps};
use crate::model::GraspMamba;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::text;

const ADAM_EPS: f64 = 1e-8;

/// Sum over the four maps of the mean smooth-L1 (δ = 1) error.
pub fn loss_fn(pred: &GraspMaps, target: &GraspMaps) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (p, t) in pred.maps().into_iter().zip(target.maps()) {
        let l = p.smooth_l1(t)?;
        total = Some(match total {
            Some(acc) => acc.add(&l)?,
            None => l,
        });
    }
    Ok(total.expect("four maps"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's minibatches.
    pub loss: f64,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Dataset loss before the first update.
    pub initial_loss: f64,
    /// Dataset loss of the final (f32-rounded) parameters.
    pub final_loss: f64,
    pub epochs: Vec<EpochStats>,
    pub n_train: usize,
}

/// A training example with its target maps `[1, H, W]` and text `[1, C_T]`.
pub struct Prepared {
    image: Tensor,
    text: Tensor,
    target: GraspMaps,
}

pub fn prepare(model: &GraspMamba, samples: &[&Sample]) -> Result<Vec<Prepared>> {
    samples
        .par_iter()
        .map(|s| {
            let (h, w) = s.image_size();
            let target = encode_targets(&s.grasps, h, w, model.config.w_max)?;
            Ok(Prepared {
                image: s.image.reshape(&[1, 3, h, w])?,
                text: text::stack(&[&model.embed(&s.prompt)?])?,
                target: GraspMaps {
                    quality: target.quality.reshape(&[1, h, w])?,
                    cos2t: target.cos2t.reshape(&[1, h, w])?,
                    sin2t: target.sin2t.reshape(&[1, h, w])?,
                    width: target.width.reshape(&[1, h, w])?,
                },
            })
        })
        .collect()
}

fn sample_loss(model: &GraspMamba, params: &ParamStore, p: &Prepared) -> Result<Tensor> {
    loss_fn(&model.forward_with(params, &p.image, &p.text)?, &p.target)
}

/// Mean loss over `data` without touching the parameters.
pub fn dataset_loss(model: &GraspMamba, data: &[Prepared]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::arg("no samples"));
    }
    let losses: Vec<f64> = data
        .par_iter()
        .map(|p| sample_loss(model, &model.params, p).map(|l| l.item()))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

/// Mean loss and summed-then-averaged gradients (one flat vector per
/// parameter, store order) over a minibatch.
fn batch_gradients(model: &GraspMamba, params: &ParamStore, batch: &[&Prepared]) -> Result<(f64, Vec<Vec<f64>>)> {
    let per_sample: Vec<(f64, Vec<Vec<f64>>)> = batch
        .par_iter()
        .map(|p| {
            let loss = sample_loss(model, params, p)?;
            let grads = loss.backward()?;
            let flat = params
                .iter()
                .map(|(_, t)| grads.get(t).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
                .collect();
            Ok((loss.item(), flat))
        })
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut sum: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
    for (l, g) in per_sample {
        loss += l;
        for (acc, gi) in sum.iter_mut().zip(g) {
            acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
        }
    }
    sum.iter_mut().flatten().for_each(|v| *v /= n);
    Ok((loss / n, sum))
}

pub fn learning_rate(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    if !cfg.cosine_decay || total_steps == 0 {
        return cfg.learning_rate;
    }
    0.5 * cfg.learning_rate * (1.0 + (PI * step as f64 / total_steps as f64).cos())
}

/// Trains `model` in place on the seen samples of `samples`, calling
/// `on_epoch` after every epoch.
pub fn train(
    model: &mut GraspMamba,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    cfg.validate()?;
    let seen: Vec<&Sample> = samples.iter().filter(|s| s.split == Split::Seen).collect();
    if seen.is_empty() {
        return Err(Error::arg("training split is empty"));
    }
    let data = prepare(model, &seen)?;
    let initial_loss = dataset_loss(model, &data)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut velocity: Vec<Vec<f64>> = model.params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
    let mut second = velocity.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let epoch_lr = learning_rate(cfg, step, total_steps);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let params = model.params.with_grad(true);
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, mut grads) = batch_gradients(model, &params, &batch)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient at epoch {}, step {step} (loss {loss})",
                    epoch + 1
                )));
            }
            if cfg.grad_clip > 0.0 {
                let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.grad_clip {
                    let s = cfg.grad_clip / norm;
                    grads.iter_mut().flatten().for_each(|g| *g *= s);
                }
            }
            let lr = learning_rate(cfg, step, total_steps);
            let names: Vec<String> = model.params.names().map(str::to_string).collect();
            let t = (step + 1) as i32;
            let (c1, c2) = (1.0 - cfg.momentum.powi(t), 1.0 - cfg.beta2.powi(t));
            for (((name, v), s2), g) in names.iter().zip(velocity.iter_mut()).zip(second.iter_mut()).zip(&grads) {
                let mut p = model.params.get(name)?.to_vec();
                for (((pi, vi), si), gi) in p.iter_mut().zip(v.iter_mut()).zip(s2.iter_mut()).zip(g) {
                    match cfg.optimizer {
                        Optimizer::Sgd => {
                            *vi = cfg.momentum * *vi + gi;
                            *pi -= lr * *vi;
                        }
                        Optimizer::Adam => {
                            *vi = cfg.momentum * *vi + (1.0 - cfg.momentum) * gi;
                            *si = cfg.beta2 * *si + (1.0 - cfg.beta2) * gi * gi;
                            *pi -= lr * (*vi / c1) / ((*si / c2).sqrt() + ADAM_EPS);
                        }
                    }
                }
                model.params.set_data(name, p)?;
            }
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: epoch_loss / data.len() as f64,
            lr: epoch_lr,
        };
        log::info!("epoch {:>4}  loss {:.6}  lr {:.3e}", stats.epoch, stats.loss, stats.lr);
        on_epoch(&stats);
        epochs.push(stats);
    }

    model.params.round_to_f32();
    model.train_seed = Some(cfg.seed);
    let final_loss = dataset_loss(model, &data)?;
    Ok(TrainReport {
        initial_loss,
        final_loss,
        epochs,
        n_train: data.len(),
    })
}
