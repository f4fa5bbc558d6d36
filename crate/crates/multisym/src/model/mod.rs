//! Encoder/projector/predictor stacks, the contrastive and
//! transformation-prediction objectives, and classifier conversion.

mod checkpoint;
pub mod linalg;
pub mod loss;
mod mlp;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use linalg::Matrix;
pub use loss::{equivariance_loss, info_nce_loss, ModelGrads};
pub use mlp::{DenseLayer, ForwardCache, Mlp, MlpGrads};
pub use train::{
    cosine_lr, fit_classifier, predict_proba, pretrain, rotation_probe, Classifier,
    ClassifierMode, EpochStats, TrainConfig, TrainLog,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::groups::{FiniteGroup, GroupId};
use crate::image::Image;

/// Which symmetry hypothesis a model is trained under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Invariant,
    Equivariant,
}

impl Hypothesis {
    pub fn name(self) -> &'static str {
        match self {
            Hypothesis::Invariant => "invariant",
            Hypothesis::Equivariant => "equivariant",
        }
    }
}

impl std::str::FromStr for Hypothesis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "invariant" => Ok(Hypothesis::Invariant),
            "equivariant" => Ok(Hypothesis::Equivariant),
            other => Err(Error::InvalidArgument(format!(
                "unknown hypothesis '{other}'"
            ))),
        }
    }
}

/// Layer widths of the encoder/projector/predictor stacks.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ArchSpec {
    /// Flattened image size, `channels * height * width`.
    pub input_dim: usize,
    /// Hidden widths of the encoder; the last entry is the representation.
    pub encoder_dims: Vec<usize>,
    /// Output width of the projector.
    pub projection_dim: usize,
    /// Hidden widths of the transformation predictor.
    pub predictor_hidden: Vec<usize>,
}

impl ArchSpec {
    /// The default desk-scale stack for `side`-pixel single-channel images.
    pub fn default_for(input_dim: usize) -> Self {
        Self {
            input_dim,
            encoder_dims: vec![128, 64],
            projection_dim: 32,
            predictor_hidden: vec![64, 64],
        }
    }

    pub fn repr_dim(&self) -> usize {
        *self.encoder_dims.last().expect("non-empty encoder dims")
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.projection_dim == 0
            || self.encoder_dims.is_empty()
            || self.encoder_dims.iter().any(|&d| d == 0)
            || self.predictor_hidden.iter().any(|&d| d == 0)
        {
            return Err(Error::DimensionMismatch(
                "architecture dimensions must be positive".to_string(),
            ));
        }
        Ok(())
    }

    fn encoder_chain(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.encoder_dims);
        dims
    }

    fn predictor_chain(&self, group_order: usize) -> Vec<usize> {
        let mut dims = vec![self.repr_dim()];
        dims.extend_from_slice(&self.predictor_hidden);
        dims.push(group_order);
        dims
    }
}

/// Weights of one pretrained member: encoder `f`, projector, and
/// transformation predictor, plus the hypothesis tag it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchSpec,
    pub hypothesis: Hypothesis,
    pub group_id: GroupId,
    pub seed: u64,
    pub encoder: Mlp,
    pub projector: Mlp,
    pub predictor: Mlp,
}

/// Initializes all stacks with the scaled-uniform scheme, deterministically
/// under `seed`. The predictor output width equals the group order.
pub fn init_params(
    arch: &ArchSpec,
    hypothesis: Hypothesis,
    group_id: GroupId,
    seed: u64,
) -> Result<ModelParams> {
    arch.validate()?;
    let group = FiniteGroup::new(group_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = Mlp::init(&arch.encoder_chain(), &mut rng);
    let projector = Mlp::init(&[arch.repr_dim(), arch.projection_dim], &mut rng);
    let predictor = Mlp::init(&arch.predictor_chain(group.order()), &mut rng);
    Ok(ModelParams {
        arch: arch.clone(),
        hypothesis,
        group_id,
        seed,
        encoder,
        projector,
        predictor,
    })
}

/// Flattens images into a batch matrix of f64 rows.
pub fn flatten_images(images: &[&Image]) -> Result<Matrix> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".to_string()))?;
    let dim = first.pixels().len();
    let mut data = Vec::with_capacity(images.len() * dim);
    for img in images {
        if img.pixels().len() != dim {
            return Err(Error::DimensionMismatch(
                "images in a batch must share dimensions".to_string(),
            ));
        }
        data.extend(img.pixels().iter().map(|&v| v as f64));
    }
    Ok(Matrix::from_vec(images.len(), dim, data))
}

/// Deterministic forward pass of the encoder over one image.
pub fn encode(params: &ModelParams, image: &Image) -> Result<Vec<f64>> {
    let batch = encode_batch(params, &[image])?;
    Ok(batch.row(0).to_vec())
}

/// Encoder forward pass over a batch of images.
pub fn encode_batch(params: &ModelParams, images: &[&Image]) -> Result<Matrix> {
    Ok(encoder_forward(params, images)?.features)
}

/// A differentiable encoder pass.
///
/// Equivariant members run the MLP directly. Invariant members pool the MLP
/// output over the full group orbit of the input, which makes the
/// representation exactly invariant by construction (up to float summation
/// order) instead of only approximately invariant through augmentation.
pub struct EncoderPass {
    caches: Vec<mlp::ForwardCache>,
    pub features: Matrix,
}

/// Runs the encoder, orbit-pooling for invariant-tagged members.
pub fn encoder_forward(params: &ModelParams, images: &[&Image]) -> Result<EncoderPass> {
    let check_dims = |input: &Matrix| -> Result<()> {
        if input.cols() != params.arch.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "image has {} values, encoder expects {}",
                input.cols(),
                params.arch.input_dim
            )));
        }
        Ok(())
    };
    match params.hypothesis {
        Hypothesis::Equivariant => {
            let input = flatten_images(images)?;
            check_dims(&input)?;
            let cache = params.encoder.forward(&input);
            let features = cache.output().clone();
            Ok(EncoderPass {
                caches: vec![cache],
                features,
            })
        }
        Hypothesis::Invariant => {
            let group = FiniteGroup::new(params.group_id);
            let mut caches = Vec::with_capacity(group.order());
            let mut features: Option<Matrix> = None;
            for g in group.elements() {
                let transformed: Vec<Image> = images
                    .iter()
                    .map(|img| group.apply(g, img))
                    .collect::<Result<_>>()?;
                let refs: Vec<&Image> = transformed.iter().collect();
                let input = flatten_images(&refs)?;
                check_dims(&input)?;
                let cache = params.encoder.forward(&input);
                match &mut features {
                    None => features = Some(cache.output().clone()),
                    Some(acc) => {
                        for (a, &v) in acc.data_mut().iter_mut().zip(cache.output().data()) {
                            *a += v;
                        }
                    }
                }
                caches.push(cache);
            }
            let mut features = features.expect("non-empty group");
            let scale = 1.0 / group.order() as f64;
            for v in features.data_mut() {
                *v *= scale;
            }
            Ok(EncoderPass { caches, features })
        }
    }
}

/// Backpropagates a gradient with respect to the pooled features into the
/// encoder parameter gradients (scaled by `scale`).
pub fn encoder_backward(
    params: &ModelParams,
    pass: &EncoderPass,
    grad_features: &Matrix,
    scale: f64,
    grads: &mut MlpGrads,
) {
    let branches = pass.caches.len() as f64;
    for cache in &pass.caches {
        params
            .encoder
            .backward(cache, grad_features.clone(), scale / branches, grads);
    }
}

/// Projects a representation and normalizes it to unit length.
pub fn project_normalize(params: &ModelParams, repr: &[f64]) -> Result<Vec<f64>> {
    if repr.len() != params.arch.repr_dim() {
        return Err(Error::DimensionMismatch(format!(
            "representation has {} values, projector expects {}",
            repr.len(),
            params.arch.repr_dim()
        )));
    }
    let input = Matrix::from_vec(1, repr.len(), repr.to_vec());
    let projected = params.projector.forward(&input).output().clone();
    let mut row = projected.row(0).to_vec();
    let norm = normalize_in_place(&mut row)?;
    let _ = norm;
    Ok(row)
}

/// Normalizes to unit length, reporting degenerate near-zero vectors.
pub(crate) fn normalize_in_place(v: &mut [f64]) -> Result<f64> {
    let norm = linalg::dot(v, v).sqrt();
    if norm < 1e-12 {
        return Err(Error::DegenerateEmbedding { norm });
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::quantize_pixel;
    use rand::Rng;

    fn toy_arch() -> ArchSpec {
        ArchSpec {
            input_dim: 16,
            encoder_dims: vec![8, 6],
            projection_dim: 4,
            predictor_hidden: vec![6],
        }
    }

    fn toy_image(seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..16).map(|_| quantize_pixel(rng.gen())).collect();
        Image::from_pixels(1, 4, 4, pixels).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_params(&toy_arch(), Hypothesis::Equivariant, GroupId::Rot4, 7).unwrap();
        let b = init_params(&toy_arch(), Hypothesis::Equivariant, GroupId::Rot4, 7).unwrap();
        let c = init_params(&toy_arch(), Hypothesis::Equivariant, GroupId::Rot4, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.encoder, c.encoder);
    }

    #[test]
    fn predictor_width_matches_group_order() {
        let rot = init_params(&toy_arch(), Hypothesis::Equivariant, GroupId::Rot4, 1).unwrap();
        assert_eq!(rot.predictor.output_dim(), 4);
        let half =
            init_params(&toy_arch(), Hypothesis::Equivariant, GroupId::HalfSwap, 1).unwrap();
        assert_eq!(half.predictor.output_dim(), 2);
    }

    #[test]
    fn encode_is_pure_and_width_correct() {
        let params = init_params(&toy_arch(), Hypothesis::Invariant, GroupId::Rot4, 3).unwrap();
        let img = toy_image(5);
        let a = encode(&params, &img).unwrap();
        let b = encode(&params, &img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn zero_weights_encode_to_zero() {
        let mut params = init_params(&toy_arch(), Hypothesis::Invariant, GroupId::Rot4, 3).unwrap();
        for layer in &mut params.encoder.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let out = encode(&params, &toy_image(5)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn project_normalize_returns_unit_vectors() {
        let params = init_params(&toy_arch(), Hypothesis::Invariant, GroupId::Rot4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let repr: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let z = project_normalize(&params, &repr).unwrap();
            let norm = linalg::dot(&z, &z).sqrt();
            assert!((norm - 1.0).abs() <= 1e-6, "norm {norm}");
        }
    }

    #[test]
    fn degenerate_projection_is_rejected() {
        let mut params = init_params(&toy_arch(), Hypothesis::Invariant, GroupId::Rot4, 3).unwrap();
        for layer in &mut params.projector.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let err = project_normalize(&params, &[1.0; 6]).unwrap_err();
        assert!(matches!(err, Error::DegenerateEmbedding { .. }));
    }

    #[test]
    fn encode_rejects_wrong_shape() {
        let params = init_params(&toy_arch(), Hypothesis::Invariant, GroupId::Rot4, 3).unwrap();
        let img = Image::zeros(1, 3, 3).unwrap();
        assert!(encode(&params, &img).is_err());
    }
}
