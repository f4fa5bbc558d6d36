//! Training objectives: the contrastive view-matching loss and the
//! transformation-prediction cross-entropy.
//!
//! Both return analytic gradients; the test suites check them against central
//! finite differences.

use crate::error::{Error, Result};
use crate::groups::{FiniteGroup, GroupId};
use crate::image::Image;

use super::linalg::{dot, matmul_nn, matmul_nt, Matrix};
use super::mlp::MlpGrads;
use super::{flatten_images, ModelParams};

/// Gradients for the encoder and predictor stacks of one model.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub encoder: MlpGrads,
    pub predictor: MlpGrads,
}

/// Contrastive loss over `2B` unit-normalized views with interleaved positive
/// pairs: view `2i` is the positive of view `2i + 1` and vice versa.
///
/// For each anchor the loss is `-log(exp(z_i·z_j/τ) / Σ_{k≠i} exp(z_i·z_k/τ))`
/// where the denominator runs over all other `2B - 1` views; the total is the
/// sum over all `2B` anchors. Returns the gradient with respect to the views.
pub fn info_nce_loss(views: &Matrix, temperature: f64) -> Result<(f64, Matrix)> {
    let n = views.rows();
    if n < 4 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "contrastive loss needs an even number of views with at least two pairs, got {n}"
        )));
    }
    if temperature <= 0.0 {
        return Err(Error::InvalidArgument(
            "temperature must be positive".to_string(),
        ));
    }
    for i in 0..n {
        let norm = dot(views.row(i), views.row(i)).sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidArgument(format!(
                "view {i} has norm {norm}, expected unit length"
            )));
        }
    }

    let sims = matmul_nt(views, views);
    let mut total = 0.0;
    // dL/dS, zero on the diagonal.
    let mut grad_s = Matrix::zeros(n, n);
    for i in 0..n {
        let positive = i ^ 1;
        let row = sims.row(i);
        let mut max_logit = f64::NEG_INFINITY;
        for (k, &s) in row.iter().enumerate() {
            if k != i {
                max_logit = max_logit.max(s / temperature);
            }
        }
        let mut denom = 0.0;
        for (k, &s) in row.iter().enumerate() {
            if k != i {
                denom += (s / temperature - max_logit).exp();
            }
        }
        let lse = max_logit + denom.ln();
        total += lse - row[positive] / temperature;
        for k in 0..n {
            if k == i {
                continue;
            }
            let p = (row[k] / temperature - lse).exp();
            let indicator = if k == positive { 1.0 } else { 0.0 };
            grad_s.set(i, k, (p - indicator) / temperature);
        }
    }
    // S = V Vᵀ, so dV = (G + Gᵀ) V.
    let mut sym = Matrix::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            sym.set(i, k, grad_s.get(i, k) + grad_s.get(k, i));
        }
    }
    let grad_views = matmul_nn(&sym, views);
    Ok((total, grad_views))
}

/// Row-wise stable softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Summed cross-entropy of logit rows against class labels, with the logit
/// gradient `softmax(row) - onehot(label)`.
pub fn cross_entropy_sum(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    assert_eq!(logits.rows(), labels.len());
    let mut grad = softmax_rows(logits);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
        let grad_row = grad.row_mut(i);
        grad_row[label] -= 1.0;
    }
    (total, grad)
}

/// Transformation-prediction loss: for every input and every group element,
/// the predictor output on the transformed input is scored against the
/// element index with cross-entropy, summed over inputs and elements.
pub fn equivariance_loss(
    params: &ModelParams,
    batch: &[Image],
    group_id: GroupId,
) -> Result<(f64, ModelGrads)> {
    if params.hypothesis != super::Hypothesis::Equivariant {
        return Err(Error::InvalidArgument(
            "transformation prediction requires an equivariant-tagged model".to_string(),
        ));
    }
    if group_id != params.group_id {
        return Err(Error::InvalidArgument(format!(
            "model was built for group {}, got {}",
            params.group_id.name(),
            group_id.name()
        )));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".to_string()));
    }
    let group = FiniteGroup::new(group_id);
    let mut transformed = Vec::with_capacity(batch.len() * group.order());
    let mut labels = Vec::with_capacity(batch.len() * group.order());
    for img in batch {
        for g in group.elements() {
            transformed.push(group.apply(g, img)?);
            labels.push(g.index);
        }
    }
    let refs: Vec<&Image> = transformed.iter().collect();
    let input = flatten_images(&refs)?;

    let enc_cache = params.encoder.forward(&input);
    let pred_cache = params.predictor.forward(enc_cache.output());
    let (loss, grad_logits) = cross_entropy_sum(pred_cache.output(), &labels);

    let mut grads = ModelGrads {
        encoder: MlpGrads::zeros_like(&params.encoder),
        predictor: MlpGrads::zeros_like(&params.predictor),
    };
    let grad_repr = params
        .predictor
        .backward(&pred_cache, grad_logits, 1.0, &mut grads.predictor);
    params
        .encoder
        .backward(&enc_cache, grad_repr, 1.0, &mut grads.encoder);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::quantize_pixel;
    use crate::model::{init_params, ArchSpec, Hypothesis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit_views(pairs: usize, dim: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(2 * pairs * dim);
        for _ in 0..2 * pairs {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            data.extend(v);
        }
        Matrix::from_vec(2 * pairs, dim, data)
    }

    #[test]
    fn identical_views_give_log3_terms() {
        // B = 2 with all four views identical: every term is log 3.
        let v = vec![1.0, 0.0, 0.0];
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend(&v);
        }
        let views = Matrix::from_vec(4, 3, data);
        let (loss, _) = info_nce_loss(&views, 0.5).unwrap();
        assert!((loss - 4.0 * 3.0f64.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn large_temperature_flattens_to_uniform() {
        let views = random_unit_views(3, 5, 1);
        let (loss, _) = info_nce_loss(&views, 1e9).unwrap();
        let expected = 6.0 * 5.0f64.ln();
        assert!((loss - expected).abs() < 1e-6, "loss {loss} vs {expected}");
    }

    #[test]
    fn rejects_non_normalized_and_small_batches() {
        let views = Matrix::from_vec(4, 2, vec![2.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        assert!(info_nce_loss(&views, 0.5).is_err());
        let tiny = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(info_nce_loss(&tiny, 0.5).is_err());
    }

    #[test]
    fn info_nce_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let views = random_unit_views(4, 6, seed);
            let (_, grad) = info_nce_loss(&views, 0.5).unwrap();
            let eps = 1e-6;
            for idx in 0..views.data().len() {
                let mut plus = views.clone();
                plus.data_mut()[idx] += eps;
                let mut minus = views.clone();
                minus.data_mut()[idx] -= eps;
                let (lp, _) = info_nce_loss(&plus, 0.5).unwrap();
                let (lm, _) = info_nce_loss(&minus, 0.5).unwrap();
                let fd = (lp - lm) / (2.0 * eps);
                let analytic = grad.data()[idx];
                if fd.abs() > 1e-6 {
                    let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
                    assert!(rel < 1e-4, "seed {seed} idx {idx}: {analytic} vs {fd}");
                }
            }
        }
    }

    fn toy_params(seed: u64) -> ModelParams {
        let arch = ArchSpec {
            input_dim: 16,
            encoder_dims: vec![8, 6],
            projection_dim: 4,
            predictor_hidden: vec![6],
        };
        init_params(&arch, Hypothesis::Equivariant, GroupId::Rot4, seed).unwrap()
    }

    fn toy_batch(n: usize, seed: u64) -> Vec<Image> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let pixels = (0..16).map(|_| quantize_pixel(rng.gen())).collect();
                Image::from_pixels(1, 4, 4, pixels).unwrap()
            })
            .collect()
    }

    #[test]
    fn uniform_predictor_hits_entropy_bound() {
        let mut params = toy_params(3);
        for layer in &mut params.predictor.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let batch = toy_batch(3, 7);
        let (loss, _) = equivariance_loss(&params, &batch, GroupId::Rot4).unwrap();
        let expected = 3.0 * 4.0 * 4.0f64.ln();
        assert!((loss - expected).abs() < 1e-9, "loss {loss} vs {expected}");
    }

    #[test]
    fn confident_correct_logits_make_cross_entropy_vanish() {
        let mut logits = Matrix::zeros(3, 4);
        for (i, &label) in [0usize, 2, 3].iter().enumerate() {
            logits.set(i, label, 60.0);
        }
        let (loss, _) = cross_entropy_sum(&logits, &[0, 2, 3]);
        assert!(loss.abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn rejects_invariant_models_and_empty_batches() {
        let arch = ArchSpec {
            input_dim: 16,
            encoder_dims: vec![8, 6],
            projection_dim: 4,
            predictor_hidden: vec![6],
        };
        let inv = init_params(&arch, Hypothesis::Invariant, GroupId::Rot4, 1).unwrap();
        assert!(equivariance_loss(&inv, &toy_batch(2, 1), GroupId::Rot4).is_err());
        let eq = toy_params(1);
        assert!(equivariance_loss(&eq, &[], GroupId::Rot4).is_err());
    }

    #[test]
    fn equivariance_gradient_matches_finite_differences() {
        let params = toy_params(5);
        let batch = toy_batch(2, 9);
        let (_, grads) = equivariance_loss(&params, &batch, GroupId::Rot4).unwrap();
        let eps = 1e-5;
        // Check every encoder and predictor parameter.
        for (stack, grad_stack) in [
            ("encoder", &grads.encoder),
            ("predictor", &grads.predictor),
        ] {
            let layer_count = match stack {
                "encoder" => params.encoder.layers.len(),
                _ => params.predictor.layers.len(),
            };
            for layer_idx in 0..layer_count {
                let weight_count = grad_stack.weights[layer_idx].len();
                for w_idx in (0..weight_count).step_by(3) {
                    let mut plus = params.clone();
                    let mut minus = params.clone();
                    {
                        let (p, m) = match stack {
                            "encoder" => (&mut plus.encoder, &mut minus.encoder),
                            _ => (&mut plus.predictor, &mut minus.predictor),
                        };
                        p.layers[layer_idx].weights[w_idx] += eps;
                        m.layers[layer_idx].weights[w_idx] -= eps;
                    }
                    let (lp, _) = equivariance_loss(&plus, &batch, GroupId::Rot4).unwrap();
                    let (lm, _) = equivariance_loss(&minus, &batch, GroupId::Rot4).unwrap();
                    let fd = (lp - lm) / (2.0 * eps);
                    let analytic = grad_stack.weights[layer_idx][w_idx];
                    if fd.abs() > 1e-6 {
                        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
                        assert!(
                            rel < 1e-4,
                            "{stack} layer {layer_idx} weight {w_idx}: {analytic} vs {fd}"
                        );
                    }
                }
            }
        }
    }
}
