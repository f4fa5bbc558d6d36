//! A dense layer stack with rectifier nonlinearities and explicit
//! reverse-mode gradients.
//!
//! Weights are held as f64 values that are always exactly representable in
//! f32 (enforced after every update), so the f32 checkpoint payload
//! round-trips bit-exactly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{matmul_nn, matmul_nt, matmul_tn, Matrix};

/// One dense layer `y = x Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    /// Scaled-uniform (Glorot) initialization, biases at zero.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| snap(rng.gen_range(-bound..bound)))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn weight_matrix(&self) -> Matrix {
        Matrix::from_vec(self.out_dim, self.in_dim, self.weights.clone())
    }
}

/// Snaps a value onto the f32 grid; keeps checkpoints lossless.
pub fn snap(v: f64) -> f64 {
    v as f32 as f64
}

/// A stack of dense layers with ReLU after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Post-activation values of every layer, `[input, h₁, …, output]`.
pub struct ForwardCache {
    pub activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("non-empty cache")
    }
}

/// Parameter gradients matching an [`Mlp`] layout.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: mlp.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            for v in w {
                *v *= factor;
            }
        }
        for b in &mut self.bias {
            for v in b {
                *v *= factor;
            }
        }
    }
}

impl Mlp {
    /// Builds a stack whose layer widths are `dims[0] -> dims[1] -> …`.
    pub fn init(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims
            .windows(2)
            .map(|pair| DenseLayer::init(pair[0], pair[1], rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("non-empty").in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    /// Forward pass over a batch of row vectors, caching activations.
    pub fn forward(&self, input: &Matrix) -> ForwardCache {
        assert_eq!(input.cols(), self.input_dim());
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for (idx, layer) in self.layers.iter().enumerate() {
            let prev = activations.last().unwrap();
            let mut out = matmul_nt(prev, &layer.weight_matrix());
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            if idx + 1 < self.layers.len() {
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(out);
        }
        ForwardCache { activations }
    }

    /// Backward pass. Accumulates parameter gradients into `grads` (scaled by
    /// `scale`) and returns the gradient with respect to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: Matrix,
        scale: f64,
        grads: &mut MlpGrads,
    ) -> Matrix {
        let mut grad = grad_output;
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            // ReLU mask applies to hidden layers only; the cached activation
            // is post-ReLU, so a zero activation means a clamped unit.
            if idx + 1 < self.layers.len() {
                let post = &cache.activations[idx + 1];
                for (g, &a) in grad.data_mut().iter_mut().zip(post.data()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let input = &cache.activations[idx];
            let grad_w = matmul_tn(&grad, input);
            for (acc, &g) in grads.weights[idx].iter_mut().zip(grad_w.data()) {
                *acc += scale * g;
            }
            for row in grad.row_iter() {
                for (acc, &g) in grads.bias[idx].iter_mut().zip(row) {
                    *acc += scale * g;
                }
            }
            grad = matmul_nn(&grad, &layer.weight_matrix());
        }
        grad
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Central-difference gradient of a scalar function of the MLP input.
    fn finite_diff_input(mlp: &Mlp, input: &Matrix, loss: impl Fn(&Matrix) -> f64) -> Matrix {
        let mut grad = Matrix::zeros(input.rows(), input.cols());
        let eps = 1e-5;
        for idx in 0..input.data().len() {
            let mut plus = input.clone();
            plus.data_mut()[idx] += eps;
            let mut minus = input.clone();
            minus.data_mut()[idx] -= eps;
            let _ = mlp;
            grad.data_mut()[idx] = (loss(&plus) - loss(&minus)) / (2.0 * eps);
        }
        grad
    }

    #[test]
    fn backward_matches_finite_differences_on_quadratic_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp = Mlp::init(&[5, 7, 3], &mut rng);
        let input = Matrix::from_vec(
            2,
            5,
            (0..10).map(|i| (i as f64 * 0.37).sin()).collect(),
        );
        // loss = 0.5 Σ y², so dL/dy = y.
        let loss = |x: &Matrix| {
            let out = mlp.forward(x);
            out.output().data().iter().map(|v| 0.5 * v * v).sum::<f64>()
        };
        let cache = mlp.forward(&input);
        let grad_out = cache.output().clone();
        let mut grads = MlpGrads::zeros_like(&mlp);
        let grad_in = mlp.backward(&cache, grad_out, 1.0, &mut grads);
        let fd = finite_diff_input(&mlp, &input, loss);
        for (a, b) in grad_in.data().iter().zip(fd.data()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn init_is_seeded_and_snapped() {
        let a = Mlp::init(&[4, 3], &mut ChaCha8Rng::seed_from_u64(7));
        let b = Mlp::init(&[4, 3], &mut ChaCha8Rng::seed_from_u64(7));
        let c = Mlp::init(&[4, 3], &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(a, b);
        assert_ne!(a, c);
        for layer in &a.layers {
            for &w in &layer.weights {
                assert_eq!(w, snap(w));
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mlp = Mlp {
            layers: vec![DenseLayer::zeros(4, 3), DenseLayer::zeros(3, 2)],
        };
        let input = Matrix::from_vec(1, 4, vec![0.3, -0.7, 1.0, 2.0]);
        let out = mlp.forward(&input);
        assert!(out.output().data().iter().all(|&v| v == 0.0));
    }
}
