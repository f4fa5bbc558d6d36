//! Training loops: contrastive pretraining, classifier conversion, and the
//! frozen-backbone transformation probe.
//!
//! All loops are plain SGD with momentum and a cosine-decayed learning rate,
//! and are bit-deterministic functions of (data, config, seed).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{augment, AugmentConfig, Dataset};
use crate::error::{Error, Result};
use crate::groups::{FiniteGroup, GroupId};
use crate::image::Image;

use super::linalg::{dot, matmul_nt, matmul_tn, Matrix};
use super::loss::{cross_entropy_sum, info_nce_loss, softmax_rows};
use super::mlp::{snap, DenseLayer, Mlp, MlpGrads};
use super::{flatten_images, init_params, ArchSpec, Hypothesis, ModelParams};

/// Hyperparameters shared by the training loops.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub temperature: f64,
    pub lambda: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            lr: 0.5,
            temperature: 0.5,
            lambda: 0.4,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 2".into(),
            ));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::InvalidArgument("lr must be positive".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::InvalidArgument(
                "temperature must be positive".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidArgument(
                "lambda must be nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(
                "momentum must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Cosine-decayed learning rate: `lr0 * (1 + cos(pi * t / total)) / 2`.
pub fn cosine_lr(lr0: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Per-epoch loss summary written into the training logs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub contrastive: f64,
    pub equivariance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

/// Loss trajectory of one training run.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

/// SGD-with-momentum state for one MLP.
struct MlpOptimizer {
    vel_weights: Vec<Vec<f64>>,
    vel_bias: Vec<Vec<f64>>,
}

impl MlpOptimizer {
    fn new(mlp: &Mlp) -> Self {
        Self {
            vel_weights: mlp.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            vel_bias: mlp.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads, lr: f64, momentum: f64) {
        for (idx, layer) in mlp.layers.iter_mut().enumerate() {
            for ((w, v), g) in layer
                .weights
                .iter_mut()
                .zip(&mut self.vel_weights[idx])
                .zip(&grads.weights[idx])
            {
                *v = momentum * *v + g;
                *w = snap(*w - lr * *v);
            }
            for ((b, v), g) in layer
                .bias
                .iter_mut()
                .zip(&mut self.vel_bias[idx])
                .zip(&grads.bias[idx])
            {
                *v = momentum * *v + g;
                *b = snap(*b - lr * *v);
            }
        }
    }
}

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    ids
}

fn data_rng(seed: u64) -> ChaCha8Rng {
    // Distinct stream from the parameter-init RNG, still seed-derived.
    ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15)
}

/// Pretrains one member with the contrastive objective; equivariant members
/// additionally optimize the transformation-prediction loss scaled by
/// `lambda`, while invariant members absorb the group into the augmentations.
pub fn pretrain(
    train_set: &Dataset,
    hypothesis: Hypothesis,
    group_id: GroupId,
    arch: &ArchSpec,
    base_augment: &AugmentConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    base_augment.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut params = init_params(arch, hypothesis, group_id, cfg.seed)?;
    let group = FiniteGroup::new(group_id);
    let aug = match hypothesis {
        Hypothesis::Invariant => AugmentConfig {
            extra_group: Some(group_id),
            ..base_augment.clone()
        },
        Hypothesis::Equivariant => AugmentConfig {
            extra_group: None,
            ..base_augment.clone()
        },
    };
    let use_eq_loss = hypothesis == Hypothesis::Equivariant && cfg.lambda > 0.0;

    let mut rng = data_rng(cfg.seed);
    let n = train_set.len();
    let batches_per_epoch = batch_starts(n, cfg.batch_size).len();
    let total_steps = cfg.epochs * batches_per_epoch;

    let mut enc_opt = MlpOptimizer::new(&params.encoder);
    let mut proj_opt = MlpOptimizer::new(&params.projector);
    let mut pred_opt = MlpOptimizer::new(&params.predictor);

    let mut log = TrainLog::default();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(n, &mut rng);
        let mut epoch_cl = 0.0;
        let mut epoch_eq = 0.0;
        let mut batch_count = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let b = chunk.len();

            // Two augmented views per item, interleaved as positive pairs.
            let mut views = Vec::with_capacity(2 * b);
            for &idx in chunk {
                let img = &train_set.items()[idx].image;
                views.push(augment(img, &aug, &mut rng)?);
                views.push(augment(img, &aug, &mut rng)?);
            }
            let refs: Vec<&Image> = views.iter().collect();
            let enc_pass = super::encoder_forward(&params, &refs)?;
            let proj_cache = params.projector.forward(&enc_pass.features);
            let mut normalized = proj_cache.output().clone();
            let mut norms = Vec::with_capacity(2 * b);
            for i in 0..normalized.rows() {
                let row = normalized.row_mut(i);
                let norm = dot(row, row).sqrt();
                if !norm.is_finite() {
                    return Err(Error::NumericalAbort {
                        epoch,
                        batch: batch_idx,
                    });
                }
                if norm < 1e-12 {
                    return Err(Error::DegenerateEmbedding { norm });
                }
                row.iter_mut().for_each(|v| *v /= norm);
                norms.push(norm);
            }
            let (loss_cl, grad_views) = info_nce_loss(&normalized, cfg.temperature)?;

            // Back through z = p / ||p||: dp = (dz - z (z . dz)) / ||p||.
            let mut grad_proj = Matrix::zeros(grad_views.rows(), grad_views.cols());
            for i in 0..grad_views.rows() {
                let z = normalized.row(i);
                let dz = grad_views.row(i);
                let radial = dot(z, dz);
                let out = grad_proj.row_mut(i);
                for ((o, &zi), &dzi) in out.iter_mut().zip(z).zip(dz) {
                    *o = (dzi - zi * radial) / norms[i];
                }
            }

            let mut enc_grads = MlpGrads::zeros_like(&params.encoder);
            let mut proj_grads = MlpGrads::zeros_like(&params.projector);
            let grad_repr = params
                .projector
                .backward(&proj_cache, grad_proj, 1.0, &mut proj_grads);
            super::encoder_backward(&params, &enc_pass, &grad_repr, 1.0, &mut enc_grads);

            let mut pred_grads = MlpGrads::zeros_like(&params.predictor);
            let mut loss_eq = 0.0;
            if use_eq_loss {
                // Transformation prediction on the raw batch images: every
                // group element of every input, scored against its index.
                let mut transformed = Vec::with_capacity(b * group.order());
                let mut labels = Vec::with_capacity(b * group.order());
                for &idx in chunk {
                    let img = &train_set.items()[idx].image;
                    for g in group.elements() {
                        transformed.push(group.apply(g, img)?);
                        labels.push(g.index);
                    }
                }
                let rot_refs: Vec<&Image> = transformed.iter().collect();
                let rot_input = flatten_images(&rot_refs)?;
                let rot_enc = params.encoder.forward(&rot_input);
                let rot_pred = params.predictor.forward(rot_enc.output());
                let (eq, grad_logits) = cross_entropy_sum(rot_pred.output(), &labels);
                loss_eq = eq;
                let grad_rot_repr = params.predictor.backward(
                    &rot_pred,
                    grad_logits,
                    cfg.lambda,
                    &mut pred_grads,
                );
                params
                    .encoder
                    .backward(&rot_enc, grad_rot_repr, cfg.lambda, &mut enc_grads);
            }

            let batch_loss = loss_cl + cfg.lambda * loss_eq;
            if !batch_loss.is_finite() {
                return Err(Error::NumericalAbort {
                    epoch,
                    batch: batch_idx,
                });
            }

            let scale = 1.0 / b as f64;
            enc_grads.scale(scale);
            proj_grads.scale(scale);
            pred_grads.scale(scale);
            let lr = cosine_lr(cfg.lr, step, total_steps);
            enc_opt.step(&mut params.encoder, &enc_grads, lr, cfg.momentum);
            proj_opt.step(&mut params.projector, &proj_grads, lr, cfg.momentum);
            if use_eq_loss {
                pred_opt.step(&mut params.predictor, &pred_grads, lr, cfg.momentum);
            }
            step += 1;

            epoch_cl += loss_cl / b as f64;
            epoch_eq += loss_eq / b as f64;
            batch_count += 1;
        }
        let denom = batch_count.max(1) as f64;
        log.epochs.push(EpochStats {
            epoch,
            loss: (epoch_cl + cfg.lambda * epoch_eq) / denom,
            contrastive: epoch_cl / denom,
            equivariance: epoch_eq / denom,
            val_accuracy: None,
        });
    }
    Ok((params, log))
}

fn batch_starts(n: usize, batch_size: usize) -> Vec<usize> {
    (0..n)
        .step_by(batch_size)
        .filter(|&s| n - s >= 2)
        .collect()
}

/// How a pretrained backbone is converted into a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    /// Freeze the backbone and train only the linear head.
    LinearProbe,
    /// Update backbone and head jointly.
    FineTune,
}

/// A pretrained encoder with a K-way linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub backbone: ModelParams,
    pub head: DenseLayer,
    pub mode: ClassifierMode,
}

fn head_logits(head: &DenseLayer, features: &Matrix) -> Matrix {
    let w = Matrix::from_vec(head.out_dim, head.in_dim, head.weights.clone());
    let mut logits = matmul_nt(features, &w);
    for i in 0..logits.rows() {
        let row = logits.row_mut(i);
        for (v, b) in row.iter_mut().zip(&head.bias) {
            *v += b;
        }
    }
    logits
}

/// Converts a pretrained backbone into a classifier with softmax
/// cross-entropy training. `LinearProbe` leaves the backbone bit-identical.
pub fn fit_classifier(
    backbone: &ModelParams,
    train: &Dataset,
    val: &Dataset,
    mode: ClassifierMode,
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let k = train.class_count();
    let repr = backbone.arch.repr_dim();
    let mut rng = data_rng(cfg.seed.wrapping_add(1));
    let mut head = DenseLayer::init(repr, k, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut backbone = backbone.clone();

    let n = train.len();
    let total_steps = cfg.epochs * batch_starts(n, cfg.batch_size).len();
    let labels = train.labels();

    // Frozen features for the probe path are computed once.
    let frozen_features = if mode == ClassifierMode::LinearProbe {
        let refs: Vec<&Image> = train.items().iter().map(|it| &it.image).collect();
        Some(super::encode_batch(&backbone, &refs)?)
    } else {
        None
    };

    let mut head_opt = head_optimizer(&head);
    let mut enc_opt = MlpOptimizer::new(&backbone.encoder);
    let mut log = TrainLog::default();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(n, &mut rng);
        let mut epoch_loss = 0.0;
        let mut batch_count = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let b = chunk.len();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let lr = cosine_lr(cfg.lr, step, total_steps);
            let loss = match (&frozen_features, mode) {
                (Some(features), ClassifierMode::LinearProbe) => {
                    let mut batch = Matrix::zeros(b, repr);
                    for (row, &idx) in chunk.iter().enumerate() {
                        batch.row_mut(row).copy_from_slice(features.row(idx));
                    }
                    let logits = head_logits(&head, &batch);
                    let (loss, grad_logits) = cross_entropy_sum(&logits, &batch_labels);
                    step_head(
                        &mut head,
                        &mut head_opt,
                        &grad_logits,
                        &batch,
                        lr,
                        cfg.momentum,
                        b,
                    );
                    loss
                }
                _ => {
                    let refs: Vec<&Image> =
                        chunk.iter().map(|&i| &train.items()[i].image).collect();
                    let enc_pass = super::encoder_forward(&backbone, &refs)?;
                    let logits = head_logits(&head, &enc_pass.features);
                    let (loss, grad_logits) = cross_entropy_sum(&logits, &batch_labels);
                    // dFeatures = dLogits · W before the head is updated.
                    let w = Matrix::from_vec(head.out_dim, head.in_dim, head.weights.clone());
                    let grad_features = super::linalg::matmul_nn(&grad_logits, &w);
                    step_head(
                        &mut head,
                        &mut head_opt,
                        &grad_logits,
                        &enc_pass.features,
                        lr,
                        cfg.momentum,
                        b,
                    );
                    let mut enc_grads = MlpGrads::zeros_like(&backbone.encoder);
                    super::encoder_backward(&backbone, &enc_pass, &grad_features, 1.0, &mut enc_grads);
                    enc_grads.scale(1.0 / b as f64);
                    enc_opt.step(&mut backbone.encoder, &enc_grads, lr, cfg.momentum);
                    loss
                }
            };
            if !loss.is_finite() {
                return Err(Error::NumericalAbort {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += loss / b as f64;
            batch_count += 1;
            step += 1;
        }
        let classifier = Classifier {
            backbone: backbone.clone(),
            head: head.clone(),
            mode,
        };
        let val_accuracy = if val.is_empty() {
            None
        } else {
            Some(classifier_accuracy(&classifier, val)?)
        };
        log.epochs.push(EpochStats {
            epoch,
            loss: epoch_loss / batch_count.max(1) as f64,
            contrastive: 0.0,
            equivariance: 0.0,
            val_accuracy,
        });
    }
    Ok((
        Classifier {
            backbone,
            head,
            mode,
        },
        log,
    ))
}

struct HeadOptimizer {
    vel_w: Vec<f64>,
    vel_b: Vec<f64>,
}

fn head_optimizer(head: &DenseLayer) -> HeadOptimizer {
    HeadOptimizer {
        vel_w: vec![0.0; head.weights.len()],
        vel_b: vec![0.0; head.bias.len()],
    }
}

#[allow(clippy::too_many_arguments)]
fn step_head(
    head: &mut DenseLayer,
    opt: &mut HeadOptimizer,
    grad_logits: &Matrix,
    features: &Matrix,
    lr: f64,
    momentum: f64,
    batch: usize,
) {
    let grad_w = matmul_tn(grad_logits, features);
    let scale = 1.0 / batch as f64;
    for ((w, v), g) in head
        .weights
        .iter_mut()
        .zip(&mut opt.vel_w)
        .zip(grad_w.data())
    {
        *v = momentum * *v + g * scale;
        *w = snap(*w - lr * *v);
    }
    let mut grad_b = vec![0.0; head.bias.len()];
    for row in grad_logits.row_iter() {
        for (acc, &g) in grad_b.iter_mut().zip(row) {
            *acc += g;
        }
    }
    for ((b, v), g) in head.bias.iter_mut().zip(&mut opt.vel_b).zip(&grad_b) {
        *v = momentum * *v + g * scale;
        *b = snap(*b - lr * *v);
    }
}

/// Row-wise class probabilities (and the raw logits) for a batch of images.
///
/// Each probability row sums to one; the logits are retained for the
/// variance-based diversity metrics.
pub fn predict_proba(classifier: &Classifier, images: &[&Image]) -> Result<(Matrix, Matrix)> {
    let features = super::encode_batch(&classifier.backbone, images)?;
    let logits = head_logits(&classifier.head, &features);
    let probs = softmax_rows(&logits);
    Ok((probs, logits))
}

fn classifier_accuracy(classifier: &Classifier, data: &Dataset) -> Result<f64> {
    let refs: Vec<&Image> = data.items().iter().map(|it| &it.image).collect();
    let (probs, _) = predict_proba(classifier, &refs)?;
    let labels = data.labels();
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if argmax(probs.row(i)) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains a fresh linear head to predict the group element from frozen
/// features of transformed inputs and reports held-out accuracy.
///
/// A backbone that erases the transformation scores near chance `1/|G|`;
/// one that encodes it approaches 1 on orientable inputs.
pub fn rotation_probe(
    backbone: &ModelParams,
    dataset: &Dataset,
    group_id: GroupId,
    cfg: &TrainConfig,
) -> Result<f64> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty probe dataset".into()));
    }
    let group = FiniteGroup::new(group_id);
    let order = group.order();
    let repr = backbone.arch.repr_dim();

    // Frozen features for every (item, element) pair.
    let mut features = Matrix::zeros(dataset.len() * order, repr);
    let mut labels = Vec::with_capacity(dataset.len() * order);
    let chunk = 256;
    let mut row = 0usize;
    let mut pending: Vec<Image> = Vec::with_capacity(chunk);
    let flush = |pending: &mut Vec<Image>, row: &mut usize, features: &mut Matrix| -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        let refs: Vec<&Image> = pending.iter().collect();
        let encoded = super::encode_batch(backbone, &refs)?;
        for i in 0..encoded.rows() {
            features.row_mut(*row).copy_from_slice(encoded.row(i));
            *row += 1;
        }
        pending.clear();
        Ok(())
    };
    for item in dataset.items() {
        for g in group.elements() {
            pending.push(group.apply(g, &item.image)?);
            labels.push(g.index);
            if pending.len() == chunk {
                flush(&mut pending, &mut row, &mut features)?;
            }
        }
    }
    flush(&mut pending, &mut row, &mut features)?;

    // Seeded 80/20 split of the probe examples.
    let mut rng = data_rng(cfg.seed.wrapping_add(2));
    let order_ids = shuffled_indices(labels.len(), &mut rng);
    let train_count = (labels.len() * 4) / 5;
    let (train_ids, eval_ids) = order_ids.split_at(train_count.max(1));

    let mut head = DenseLayer::init(repr, order, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut opt = head_optimizer(&head);
    let total_steps = cfg.epochs * batch_starts(train_ids.len(), cfg.batch_size).len();
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        let epoch_order = shuffled_indices(train_ids.len(), &mut rng);
        for chunk_ids in epoch_order.chunks(cfg.batch_size) {
            if chunk_ids.len() < 2 {
                continue;
            }
            let b = chunk_ids.len();
            let mut batch = Matrix::zeros(b, repr);
            let mut batch_labels = Vec::with_capacity(b);
            for (r, &local) in chunk_ids.iter().enumerate() {
                let idx = train_ids[local];
                batch.row_mut(r).copy_from_slice(features.row(idx));
                batch_labels.push(labels[idx]);
            }
            let logits = head_logits(&head, &batch);
            let (loss, grad_logits) = cross_entropy_sum(&logits, &batch_labels);
            if !loss.is_finite() {
                return Err(Error::NumericalAbort { epoch: 0, batch: 0 });
            }
            let lr = cosine_lr(cfg.lr, step, total_steps);
            step_head(&mut head, &mut opt, &grad_logits, &batch, lr, cfg.momentum, b);
            step += 1;
        }
    }

    let mut correct = 0usize;
    for &idx in eval_ids {
        let feat = Matrix::from_vec(1, repr, features.row(idx).to_vec());
        let logits = head_logits(&head, &feat);
        if argmax(logits.row(0)) == labels[idx] {
            correct += 1;
        }
    }
    Ok(correct as f64 / eval_ids.len().max(1) as f64)
}
