//! Closed-form least-squares heads for linear encoders that are invariant or
//! equivariant to a fixed input transformation, verified against an
//! independent stacked-system solver.
//!
//! The setting: a linear model `v' B x` trained on the doubled dataset
//! `[X; T(X)]` with labels `[y; y']`. When the encoder satisfies `B T = B`
//! the head has the closed form
//!
//! ```text
//! v_inv = 1/2 (B XᵀX Bᵀ)⁻¹ B Xᵀ (y + y')
//! ```
//!
//! and when it intertwines the input transform with a latent transform,
//! `B' T = T' B'`, the head becomes
//!
//! ```text
//! v_eq = (B'XᵀXB'ᵀ + (X B'ᵀ T'ᵀ)ᵀ (X B'ᵀ T'ᵀ))⁻¹ (B'Xᵀy + (X B'ᵀ T'ᵀ)ᵀ y')
//! ```
//!
//! The two heads are different functions of the data: with `y' = -y` the
//! invariant head is exactly zero while the equivariant head generically is
//! not.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Condition-number ceiling for the Gram matrix before a solve is refused.
const SOLVE_COND_LIMIT: f64 = 1e12;

/// Condition-number ceiling for accepting a generated instance.
const INSTANCE_COND_LIMIT: f64 = 1e8;

/// Least-squares solution of `A v = b` via SVD, with a condition check on
/// the normal-equation Gram matrix `AᵀA`.
pub fn ols_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "system has {} rows but {} targets",
            a.nrows(),
            b.len()
        )));
    }
    let svd = a.clone().svd(true, true);
    let cond = gram_condition(&svd.singular_values);
    if !cond.is_finite() || cond > SOLVE_COND_LIMIT {
        return Err(Error::IllConditioned {
            cond,
            limit: SOLVE_COND_LIMIT,
        });
    }
    svd.solve(b, 0.0)
        .map_err(|e| Error::InvalidArgument(format!("svd solve failed: {e}")))
}

fn gram_condition(singular_values: &DVector<f64>) -> f64 {
    let max = singular_values.iter().cloned().fold(0.0f64, f64::max);
    let min = singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return f64::INFINITY;
    }
    (max / min).powi(2)
}

/// Solves `G v = rhs` for a symmetric Gram matrix via SVD with a condition
/// estimate, reporting singular systems instead of inverting blindly.
fn solve_gram(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = gram.clone().svd(true, true);
    let max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !cond.is_finite() || cond > SOLVE_COND_LIMIT {
        return Err(Error::IllConditioned {
            cond,
            limit: SOLVE_COND_LIMIT,
        });
    }
    svd.solve(rhs, 0.0)
        .map_err(|e| Error::InvalidArgument(format!("svd solve failed: {e}")))
}

/// Closed-form head for an invariant encoder:
/// `1/2 (B XᵀX Bᵀ)⁻¹ B Xᵀ (y + y')`.
pub fn invariant_closed_form(
    encoder: &DMatrix<f64>,
    inputs: &DMatrix<f64>,
    labels: &DVector<f64>,
    labels_transformed: &DVector<f64>,
) -> Result<DVector<f64>> {
    let features = inputs * encoder.transpose(); // n×k
    let gram = features.transpose() * &features; // B XᵀX Bᵀ
    let rhs = features.transpose() * (labels + labels_transformed) * 0.5;
    solve_gram(&gram, &rhs)
}

/// Closed-form head for an equivariant encoder with latent transform `T'`.
pub fn equivariant_closed_form(
    encoder: &DMatrix<f64>,
    inputs: &DMatrix<f64>,
    labels: &DVector<f64>,
    labels_transformed: &DVector<f64>,
    latent_transform: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let features = inputs * encoder.transpose(); // X B'ᵀ, n×k
    let transformed = &features * latent_transform.transpose(); // rows mapped by T'
    let gram = features.transpose() * &features + transformed.transpose() * &transformed;
    let rhs = features.transpose() * labels + transformed.transpose() * labels_transformed;
    solve_gram(&gram, &rhs)
}

/// A sampled problem satisfying the invariance/equivariance identities.
#[derive(Debug, Clone)]
pub struct TheoryInstance {
    /// `X`: one input per row, n×d.
    pub inputs: DMatrix<f64>,
    /// Labels for the raw inputs.
    pub labels: DVector<f64>,
    /// Labels for the transformed inputs.
    pub labels_transformed: DVector<f64>,
    /// `T`: d×d input transformation (an involutive coordinate permutation).
    pub input_transform: DMatrix<f64>,
    /// `B`: k×d encoder with `B T = B`.
    pub encoder_invariant: DMatrix<f64>,
    /// `B'`: k×d encoder with `B' T = T' B'`.
    pub encoder_equivariant: DMatrix<f64>,
    /// `T'`: k×k latent transformation paired with `B'`.
    pub latent_transform: DMatrix<f64>,
}

impl TheoryInstance {
    /// Max deviation from the invariance and equivariance identities.
    pub fn identity_deviation(&self) -> f64 {
        let inv = &self.encoder_invariant * &self.input_transform - &self.encoder_invariant;
        let eq = &self.encoder_equivariant * &self.input_transform
            - &self.latent_transform * &self.encoder_equivariant;
        inv.iter()
            .chain(eq.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// The transformed inputs `T(X)` with one input per row.
    pub fn transformed_inputs(&self) -> DMatrix<f64> {
        &self.inputs * self.input_transform.transpose()
    }
}

/// Samples an instance. The input transformation is a product of disjoint
/// coordinate swaps; invariant encoder rows live in its +1 eigenspace, and
/// the equivariant encoder maps the +1/-1 eigenspaces onto the +1/-1
/// eigenspaces of a diagonal latent reflection.
fn sample_instance(rng: &mut ChaCha8Rng) -> TheoryInstance {
    let d: usize = rng.gen_range(5..=8);
    let swaps: usize = rng.gen_range(2..=(d / 2));
    let k_max = 4usize.min(d - swaps).max(2);
    let k: usize = rng.gen_range(2..=k_max);
    let k_neg_max = (k - 1).min(swaps).max(1);
    let k_neg: usize = rng.gen_range(1..=k_neg_max);
    let k_pos = k - k_neg;
    let n: usize = rng.gen_range(12..=32);

    // T swaps coordinates (2i, 2i+1) for i < swaps.
    let mut transform = DMatrix::<f64>::identity(d, d);
    for i in 0..swaps {
        let (a, b) = (2 * i, 2 * i + 1);
        transform[(a, a)] = 0.0;
        transform[(b, b)] = 0.0;
        transform[(a, b)] = 1.0;
        transform[(b, a)] = 1.0;
    }

    // Orthonormal bases of the +1 and -1 eigenspaces.
    let sqrt_half = 0.5f64.sqrt();
    let plus_dim = d - swaps;
    let mut plus = DMatrix::<f64>::zeros(d, plus_dim);
    for i in 0..swaps {
        plus[(2 * i, i)] = sqrt_half;
        plus[(2 * i + 1, i)] = sqrt_half;
    }
    for (col, coord) in (2 * swaps..d).enumerate() {
        plus[(coord, swaps + col)] = 1.0;
    }
    let mut minus = DMatrix::<f64>::zeros(d, swaps);
    for i in 0..swaps {
        minus[(2 * i, i)] = sqrt_half;
        minus[(2 * i + 1, i)] = -sqrt_half;
    }

    let gauss = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    };

    let encoder_invariant = gauss(rng, k, plus_dim) * plus.transpose();

    let mut latent = DMatrix::<f64>::identity(k, k);
    for i in k_pos..k {
        latent[(i, i)] = -1.0;
    }
    let mut encoder_equivariant = DMatrix::<f64>::zeros(k, d);
    let top = gauss(rng, k_pos, plus_dim) * plus.transpose();
    let bottom = gauss(rng, k_neg, swaps) * minus.transpose();
    for r in 0..k_pos {
        encoder_equivariant.set_row(r, &top.row(r));
    }
    for r in 0..k_neg {
        encoder_equivariant.set_row(k_pos + r, &bottom.row(r));
    }

    let inputs = gauss(rng, n, d);
    let labels = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
    let labels_transformed = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));

    TheoryInstance {
        inputs,
        labels,
        labels_transformed,
        input_transform: transform,
        encoder_invariant,
        encoder_equivariant,
        latent_transform: latent,
    }
}

fn instance_is_well_conditioned(instance: &TheoryInstance) -> bool {
    let features_inv = &instance.inputs * instance.encoder_invariant.transpose();
    let gram_inv = features_inv.transpose() * &features_inv;
    let features_eq = &instance.inputs * instance.encoder_equivariant.transpose();
    let mapped = &features_eq * instance.latent_transform.transpose();
    let gram_eq = features_eq.transpose() * &features_eq + mapped.transpose() * &mapped;
    for gram in [gram_inv, gram_eq] {
        let svd = gram.svd(false, false);
        let max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let min = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min <= 0.0 || max / min > INSTANCE_COND_LIMIT {
            return false;
        }
    }
    true
}

/// Outcome of [`verify_closed_forms`]: the maximum relative error of each
/// closed form against the stacked-system solver.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClosedFormReport {
    pub trials: usize,
    pub resampled: usize,
    pub max_rel_error_inv: f64,
    pub max_rel_error_equiv: f64,
}

fn relative_error(candidate: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    let diff = (candidate - reference).norm();
    diff / reference.norm().max(1e-12)
}

/// Compares both closed forms against least squares on the explicitly
/// stacked system `[X; T(X)]` for `trials` random instances. Degenerate
/// draws are resampled and counted.
pub fn verify_closed_forms(seed: u64, trials: usize) -> Result<ClosedFormReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resampled = 0usize;
    let mut max_inv = 0.0f64;
    let mut max_eq = 0.0f64;
    for _ in 0..trials {
        let instance = loop {
            let candidate = sample_instance(&mut rng);
            if instance_is_well_conditioned(&candidate) {
                break candidate;
            }
            resampled += 1;
        };
        let transformed = instance.transformed_inputs();
        let stacked_labels = stack_vectors(&instance.labels, &instance.labels_transformed);

        // Invariant route: the oracle sees the raw doubled design matrix.
        let design_inv = stack_matrices(
            &(&instance.inputs * instance.encoder_invariant.transpose()),
            &(&transformed * instance.encoder_invariant.transpose()),
        );
        let oracle_inv = ols_solve(&design_inv, &stacked_labels)?;
        let closed_inv = invariant_closed_form(
            &instance.encoder_invariant,
            &instance.inputs,
            &instance.labels,
            &instance.labels_transformed,
        )?;
        max_inv = max_inv.max(relative_error(&closed_inv, &oracle_inv));

        let design_eq = stack_matrices(
            &(&instance.inputs * instance.encoder_equivariant.transpose()),
            &(&transformed * instance.encoder_equivariant.transpose()),
        );
        let oracle_eq = ols_solve(&design_eq, &stacked_labels)?;
        let closed_eq = equivariant_closed_form(
            &instance.encoder_equivariant,
            &instance.inputs,
            &instance.labels,
            &instance.labels_transformed,
            &instance.latent_transform,
        )?;
        max_eq = max_eq.max(relative_error(&closed_eq, &oracle_eq));
    }
    Ok(ClosedFormReport {
        trials,
        resampled,
        max_rel_error_inv: max_inv,
        max_rel_error_equiv: max_eq,
    })
}

fn stack_matrices(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::<f64>::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

fn stack_vectors(top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::<f64>::zeros(top.len() + bottom.len());
    out.rows_mut(0, top.len()).copy_from(top);
    out.rows_mut(top.len(), bottom.len()).copy_from(bottom);
    out
}

/// Builds an instance with `y' = -y`, for which the invariant head is exactly
/// zero while the equivariant head generically is not.
pub fn opposing_labels_instance(seed: u64) -> TheoryInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut instance = sample_instance(&mut rng);
        instance.labels_transformed = -&instance.labels;
        if instance_is_well_conditioned(&instance) {
            return instance;
        }
    }
}
