//! From-scratch multilayer perceptron: forward pass, mean-squared-error
//! loss, backpropagation, and plain SGD, plus a finite-difference gradient
//! oracle for checking the analytic gradients.
//!
//! Layers compute `a_k = f(W_k a_{k-1} + b_k)`. The final layer is always
//! `Identity` (regression head). Parameters enumerate per layer as the
//! weight matrix in row-major order followed by the bias vector; that order
//! is also the persistence order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Default step for central finite differences.
pub const DEFAULT_FD_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("bad layer dimensions: {0}")]
    BadDims(String),
    #[error("{what}: expected length {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("forward cache does not match this network")]
    CacheMismatch,
    #[error("learning rate must be finite and nonnegative, got {0}")]
    BadLearningRate(f64),
    #[error("batch size must be at least 1")]
    BadBatchSize,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("mse needs equal nonzero lengths, got {0} and {1}")]
    BadLossInput(usize, usize),
}

/// Elementwise activation applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    ReLU,
    Tanh,
}

impl Activation {
    pub fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Identity => z,
            Activation::ReLU => {
                if z > S::zero() {
                    z
                } else {
                    S::zero()
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z` whose activation value is `a`.
    pub fn derivative<S: Scalar>(self, z: S, a: S) -> S {
        match self {
            Activation::Identity => S::one(),
            Activation::ReLU => {
                if z > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Tanh => S::one() - a * a,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::ReLU => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::ReLU),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// One dense layer: `out_dim x in_dim` weights, `out_dim` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S> {
    weights: Matrix<S>,
    bias: Vec<S>,
    activation: Activation,
}

impl<S: Scalar> Layer<S> {
    pub fn new(weights: Matrix<S>, bias: Vec<S>, activation: Activation) -> Result<Self, NnError> {
        if weights.rows() != bias.len() {
            return Err(NnError::ShapeMismatch {
                what: "layer bias",
                expected: weights.rows(),
                got: bias.len(),
            });
        }
        Ok(Layer {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix<S> {
        &self.weights
    }

    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }
}

/// Dense feed-forward network for regression.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S> {
    layers: Vec<Layer<S>>,
}

/// Per-layer pre-activations and activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    input: Vec<S>,
    pre: Vec<Vec<S>>,
    act: Vec<Vec<S>>,
}

impl<S: Scalar> ForwardCache<S> {
    pub fn input(&self) -> &[S] {
        &self.input
    }

    /// Activation output of layer `k`.
    pub fn activation(&self, k: usize) -> &[S] {
        &self.act[k]
    }

    pub fn layer_count(&self) -> usize {
        self.act.len()
    }
}

/// Per-layer weight and bias gradients, shape-congruent with an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    d_weights: Vec<Matrix<S>>,
    d_bias: Vec<Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(mlp: &Mlp<S>) -> Self {
        Gradients {
            d_weights: mlp
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            d_bias: mlp.layers.iter().map(|l| vec![S::zero(); l.out_dim()]).collect(),
        }
    }

    pub fn d_weights(&self, layer: usize) -> &Matrix<S> {
        &self.d_weights[layer]
    }

    pub fn d_bias(&self, layer: usize) -> &[S] {
        &self.d_bias[layer]
    }

    pub fn add_assign(&mut self, other: &Gradients<S>) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            a.scaled_add(S::one(), b);
        }
        for (a, b) in self.d_bias.iter_mut().zip(&other.d_bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    /// Flattens in parameter order (per layer: weights row-major, then bias).
    pub fn to_vec(&self) -> Vec<S> {
        let mut out = Vec::new();
        for (w, b) in self.d_weights.iter().zip(&self.d_bias) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }
}

impl<S: Scalar> Mlp<S> {
    /// Builds a network with the given layer sizes, e.g. `[4, 3, 1]` for a
    /// 4-input, one-hidden-layer, scalar-output net. Hidden layers use
    /// `hidden_activation`; the output layer is `Identity`. Weights are
    /// uniform in `±1/sqrt(fan_in)`, biases zero, all draws seeded.
    pub fn init(
        layer_dims: &[usize],
        hidden_activation: Activation,
        seed: u64,
    ) -> Result<Self, NnError> {
        if layer_dims.len() < 2 {
            return Err(NnError::BadDims(format!(
                "need at least input and output dims, got {layer_dims:?}"
            )));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(NnError::BadDims(format!(
                "all dims must be positive, got {layer_dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(layer_dims.len() - 1);
        for (k, pair) in layer_dims.windows(2).enumerate() {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let bound = 1.0 / (in_dim as f64).sqrt();
            let mut weights = Matrix::zeros(out_dim, in_dim);
            for w in weights.data_mut() {
                *w = S::of(rng.gen_range(-bound..bound));
            }
            let activation = if k == layer_dims.len() - 2 {
                Activation::Identity
            } else {
                hidden_activation
            };
            layers.push(Layer {
                weights,
                bias: vec![S::zero(); out_dim],
                activation,
            });
        }
        Ok(Mlp { layers })
    }

    /// Assembles a network from explicit layers, checking that dimensions
    /// chain and the output layer is `Identity`.
    pub fn from_layers(layers: Vec<Layer<S>>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::BadDims("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::BadDims(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        if layers.last().unwrap().activation != Activation::Identity {
            return Err(NnError::BadDims(
                "output layer must use the Identity activation".into(),
            ));
        }
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// `[input_dim, out_1, ..., out_L]`
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim()));
        dims
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Width of the last hidden layer (input width for a single-layer net).
    pub fn last_hidden_width(&self) -> usize {
        self.layers.last().unwrap().in_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Reads parameter `i` in flat parameter order.
    pub fn param(&self, i: usize) -> S {
        let (layer, offset) = self.locate_param(i);
        let l = &self.layers[layer];
        let w_len = l.weights.rows() * l.weights.cols();
        if offset < w_len {
            l.weights.data()[offset]
        } else {
            l.bias[offset - w_len]
        }
    }

    /// Overwrites parameter `i` in flat parameter order.
    pub fn set_param(&mut self, i: usize, v: S) {
        let (layer, offset) = self.locate_param(i);
        let l = &mut self.layers[layer];
        let w_len = l.weights.rows() * l.weights.cols();
        if offset < w_len {
            l.weights.data_mut()[offset] = v;
        } else {
            l.bias[offset - w_len] = v;
        }
    }

    fn locate_param(&self, i: usize) -> (usize, usize) {
        let mut rem = i;
        for (k, l) in self.layers.iter().enumerate() {
            let count = l.param_count();
            if rem < count {
                return (k, rem);
            }
            rem -= count;
        }
        panic!("parameter index {i} out of range {}", self.param_count());
    }

    /// Forward pass returning the output and the cache backpropagation needs.
    pub fn forward(&self, x: &[S]) -> Result<(Vec<S>, ForwardCache<S>), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.bias.clone();
            let mut zw = vec![S::zero(); layer.out_dim()];
            layer.weights.mul_vec(&current, &mut zw);
            for (zi, wi) in z.iter_mut().zip(&zw) {
                *zi += *wi;
            }
            let a: Vec<S> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            current = a.clone();
            act.push(a);
        }
        Ok((
            current,
            ForwardCache {
                input: x.to_vec(),
                pre,
                act,
            },
        ))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, x: &[S]) -> Result<Vec<S>, NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut current = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.bias.clone();
            let mut zw = vec![S::zero(); layer.out_dim()];
            layer.weights.mul_vec(&current, &mut zw);
            for (zi, wi) in z.iter_mut().zip(&zw) {
                *zi += *wi;
            }
            for v in z.iter_mut() {
                *v = layer.activation.apply(*v);
            }
            current = z;
        }
        Ok(current)
    }

    /// Backpropagation from the output layer. `dl_dy` is the gradient of a
    /// scalar loss with respect to the network output; returns parameter
    /// gradients and the gradient with respect to the input (which lets a
    /// downstream module chain into an upstream one).
    pub fn backward(
        &self,
        cache: &ForwardCache<S>,
        dl_dy: &[S],
    ) -> Result<(Gradients<S>, Vec<S>), NnError> {
        self.backward_from(cache, self.layers.len() - 1, dl_dy)
    }

    /// Backpropagation starting at layer `start`, where `dl_dact` is the
    /// loss gradient with respect to that layer's activation output. Layers
    /// above `start` receive zero gradients.
    pub fn backward_from(
        &self,
        cache: &ForwardCache<S>,
        start: usize,
        dl_dact: &[S],
    ) -> Result<(Gradients<S>, Vec<S>), NnError> {
        if cache.act.len() != self.layers.len()
            || cache.input.len() != self.input_dim()
            || cache
                .act
                .iter()
                .zip(&self.layers)
                .any(|(a, l)| a.len() != l.out_dim())
        {
            return Err(NnError::CacheMismatch);
        }
        if start >= self.layers.len() {
            return Err(NnError::BadDims(format!(
                "start layer {start} outside network of {} layers",
                self.layers.len()
            )));
        }
        if dl_dact.len() != self.layers[start].out_dim() {
            return Err(NnError::ShapeMismatch {
                what: "output gradient",
                expected: self.layers[start].out_dim(),
                got: dl_dact.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta_act = dl_dact.to_vec();
        for k in (0..=start).rev() {
            let layer = &self.layers[k];
            // delta_z = delta_act ⊙ f'(z)
            let delta_z: Vec<S> = delta_act
                .iter()
                .zip(cache.pre[k].iter().zip(&cache.act[k]))
                .map(|(&d, (&z, &a))| d * layer.activation.derivative(z, a))
                .collect();
            let below: &[S] = if k == 0 { &cache.input } else { &cache.act[k - 1] };
            grads.d_weights[k].add_outer(&delta_z, below);
            for (db, dz) in grads.d_bias[k].iter_mut().zip(&delta_z) {
                *db = *dz;
            }
            let mut next = vec![S::zero(); layer.in_dim()];
            layer.weights.mul_vec_transposed(&delta_z, &mut next);
            delta_act = next;
        }
        Ok((grads, delta_act))
    }

    /// One SGD update: `θ ← θ − lr · g`. A zero learning rate is a no-op;
    /// negative or non-finite rates are rejected.
    pub fn sgd_step(&mut self, grads: &Gradients<S>, learning_rate: S) -> Result<(), NnError> {
        if !(learning_rate >= S::zero()) || !learning_rate.is_finite() {
            return Err(NnError::BadLearningRate(learning_rate.as_f64()));
        }
        if grads.d_weights.len() != self.layers.len() {
            return Err(NnError::CacheMismatch);
        }
        for (layer, (dw, db)) in self
            .layers
            .iter_mut()
            .zip(grads.d_weights.iter().zip(&grads.d_bias))
        {
            if dw.rows() != layer.weights.rows()
                || dw.cols() != layer.weights.cols()
                || db.len() != layer.bias.len()
            {
                return Err(NnError::CacheMismatch);
            }
            layer.weights.scaled_add(-learning_rate, dw);
            for (b, g) in layer.bias.iter_mut().zip(db) {
                *b = *b - learning_rate * *g;
            }
        }
        Ok(())
    }
}

/// Mean-squared-error loss `(1/2N) Σ (y_i − ŷ_i)²`.
pub fn mse_loss<S: Scalar>(y: &[S], yhat: &[S]) -> Result<S, NnError> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(NnError::BadLossInput(y.len(), yhat.len()));
    }
    let n = S::of(y.len() as f64);
    let sum: S = y
        .iter()
        .zip(yhat)
        .map(|(&t, &p)| {
            let d = t - p;
            d * d
        })
        .sum();
    Ok(sum / (S::of(2.0) * n))
}

/// Central-difference gradient of an arbitrary scalar objective over the
/// network's parameters: `(L(θ+ε) − L(θ−ε)) / 2ε` per parameter. Never
/// touches `backward`, so it serves as an independent oracle — including for
/// composed objectives that route this network's output through other
/// modules inside `loss`.
pub fn finite_diff_grad<S: Scalar>(
    mlp: &Mlp<S>,
    loss: impl Fn(&Mlp<S>) -> S,
    epsilon: S,
) -> Gradients<S> {
    let mut probe = mlp.clone();
    let mut grads = Gradients::zeros_like(mlp);
    let two_eps = S::of(2.0) * epsilon;
    let mut flat = Vec::with_capacity(mlp.param_count());
    for i in 0..mlp.param_count() {
        let orig = probe.param(i);
        probe.set_param(i, orig + epsilon);
        let up = loss(&probe);
        probe.set_param(i, orig - epsilon);
        let down = loss(&probe);
        probe.set_param(i, orig);
        flat.push((up - down) / two_eps);
    }
    // unflatten in parameter order
    let mut it = flat.into_iter();
    for (w, b) in grads.d_weights.iter_mut().zip(grads.d_bias.iter_mut()) {
        for v in w.data_mut() {
            *v = it.next().unwrap();
        }
        for v in b.iter_mut() {
            *v = it.next().unwrap();
        }
    }
    grads
}

/// Shuffled mini-batch index sets for one epoch. Indices within each batch
/// are re-sorted ascending so that a full-size batch accumulates in natural
/// order — one epoch at `batch_size == n` reproduces the full-gradient step
/// bit for bit.
pub(crate) fn shuffled_batches(
    n: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    indices
        .chunks(batch_size)
        .map(|chunk| {
            let mut batch = chunk.to_vec();
            batch.sort_unstable();
            batch
        })
        .collect()
}

/// Loss of the network over a whole dataset (flattened over outputs).
pub fn dataset_loss<S: Scalar>(
    mlp: &Mlp<S>,
    inputs: &[Vec<S>],
    targets: &[Vec<S>],
) -> Result<S, NnError> {
    let mut flat_y = Vec::with_capacity(inputs.len());
    let mut flat_p = Vec::with_capacity(inputs.len());
    for (x, t) in inputs.iter().zip(targets) {
        let p = mlp.predict(x)?;
        flat_y.extend_from_slice(t);
        flat_p.extend_from_slice(&p);
    }
    mse_loss(&flat_y, &flat_p)
}

/// Mini-batch SGD over the dataset. Shuffles with a seeded generator each
/// epoch, averages gradients over each batch, and records the post-epoch
/// training loss. Deterministic given the seed and input order.
pub fn train_epochs<S: Scalar>(
    mlp: &mut Mlp<S>,
    inputs: &[Vec<S>],
    targets: &[Vec<S>],
    batch_size: usize,
    learning_rate: S,
    epochs: usize,
    seed: u64,
) -> Result<Vec<S>, NnError> {
    if inputs.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if inputs.len() != targets.len() {
        return Err(NnError::ShapeMismatch {
            what: "targets",
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    if batch_size < 1 {
        return Err(NnError::BadBatchSize);
    }
    if !(learning_rate >= S::zero()) || !learning_rate.is_finite() {
        return Err(NnError::BadLearningRate(learning_rate.as_f64()));
    }
    let n = inputs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        for batch in shuffled_batches(n, batch_size, &mut rng) {
            let b = S::of(batch.len() as f64);
            let mut acc = Gradients::zeros_like(mlp);
            for &i in &batch {
                let (y, cache) = mlp.forward(&inputs[i])?;
                if y.len() != targets[i].len() {
                    return Err(NnError::ShapeMismatch {
                        what: "target row",
                        expected: y.len(),
                        got: targets[i].len(),
                    });
                }
                let dl_dy: Vec<S> = y
                    .iter()
                    .zip(&targets[i])
                    .map(|(&p, &t)| (p - t) / b)
                    .collect();
                let (g, _) = mlp.backward(&cache, &dl_dy)?;
                acc.add_assign(&g);
            }
            mlp.sgd_step(&acc, learning_rate)?;
        }
        history.push(dataset_loss(mlp, inputs, targets)?);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn single_identity_layer(w: f64, b: f64) -> Mlp<f64> {
        Mlp::from_layers(vec![Layer::new(
            Matrix::from_rows(&[vec![w]]).unwrap(),
            vec![b],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    /// Relative error with an absolute guard for near-zero gradients.
    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = Mlp::<f64>::init(&[2, 5, 5, 1], Activation::ReLU, 0).unwrap();
        let b = Mlp::<f64>::init(&[2, 5, 5, 1], Activation::ReLU, 0).unwrap();
        assert_eq!(a, b);
        let dims: Vec<(usize, usize)> = a
            .layers()
            .iter()
            .map(|l| (l.out_dim(), l.in_dim()))
            .collect();
        assert_eq!(dims, vec![(5, 2), (5, 5), (1, 5)]);
        assert_eq!(a.layers().last().unwrap().activation(), Activation::Identity);
        assert!(a.layers()[0].bias().iter().all(|&b| b == 0.0));

        let c = Mlp::<f64>::init(&[2, 5, 5, 1], Activation::ReLU, 1).unwrap();
        assert_ne!(a, c);
        assert!(Mlp::<f64>::init(&[4], Activation::ReLU, 0).is_err());
        assert!(Mlp::<f64>::init(&[4, 0, 1], Activation::ReLU, 0).is_err());
    }

    #[test]
    fn forward_hand_examples() {
        // zero weights and biases -> zero output
        let zero = Mlp::from_layers(vec![Layer::new(
            Matrix::<f64>::zeros(2, 3),
            vec![0.0; 2],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let (y, _) = zero.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);

        // single identity layer: 2*3 + 1 = 7
        let m = single_identity_layer(2.0, 1.0);
        let (y, _) = m.forward(&[3.0]).unwrap();
        assert_eq!(y, vec![7.0]);

        assert!(m.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn relu_clamps_negative_preactivations() {
        // identity weights so pre-activation equals input
        let m = Mlp::from_layers(vec![
            Layer::new(
                Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
                vec![0.0; 2],
                Activation::ReLU,
            )
            .unwrap(),
            Layer::new(
                Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
                vec![0.0; 2],
                Activation::Identity,
            )
            .unwrap(),
        ])
        .unwrap();
        let (y, cache) = m.forward(&[-1.0, 2.0]).unwrap();
        assert_eq!(cache.activation(0), &[0.0, 2.0]);
        assert_eq!(y, vec![0.0, 2.0]);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0], &[2.0]).unwrap(), 2.0);
        assert_eq!(mse_loss(&[1.0, 3.0], &[2.0, 5.0]).unwrap(), 1.25);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse_loss::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn backward_single_identity_layer_by_hand() {
        // W = [[2]], x = [3], dL/dy = [1]: dW = [[3]], db = [1], dL/dx = [2]
        let m = single_identity_layer(2.0, 0.0);
        let (_, cache) = m.forward(&[3.0]).unwrap();
        let (grads, dl_dx) = m.backward(&cache, &[1.0]).unwrap();
        assert_eq!(grads.d_weights(0).data(), &[3.0]);
        assert_eq!(grads.d_bias(0), &[1.0]);
        assert_eq!(dl_dx, vec![2.0]);

        let (zero_grads, zero_dx) = m.backward(&cache, &[0.0]).unwrap();
        assert_eq!(zero_grads.d_weights(0).data(), &[0.0]);
        assert_eq!(zero_dx, vec![0.0]);
    }

    #[test]
    fn repeated_forward_reproduces_the_cache_bit_for_bit() {
        let m = Mlp::<f64>::init(&[3, 4, 2], Activation::Tanh, 2).unwrap();
        let x = [0.3, -0.7, 1.1];
        let (y1, c1) = m.forward(&x).unwrap();
        let (y2, c2) = m.forward(&x).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(c1.input(), c2.input());
        for k in 0..c1.layer_count() {
            assert_eq!(c1.activation(k), c2.activation(k));
            assert_eq!(c1.pre[k], c2.pre[k]);
        }
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let m = single_identity_layer(2.0, 0.0);
        let other = Mlp::<f64>::init(&[3, 2, 1], Activation::Tanh, 0).unwrap();
        let (_, cache) = other.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(m.backward(&cache, &[1.0]), Err(NnError::CacheMismatch)));
    }

    #[test]
    fn finite_diff_matches_closed_form_on_quadratic() {
        // y = w*x, loss = (1/2)(y - t)^2 with x = 3, t = 1, w = 2:
        // dL/dw = (wx - t)*x = 15 exactly.
        let m = single_identity_layer(2.0, 0.0);
        let loss = |net: &Mlp<f64>| {
            let y = net.predict(&[3.0]).unwrap();
            mse_loss(&[1.0], &y).unwrap()
        };
        let g = finite_diff_grad(&m, loss, 1e-6);
        assert!((g.d_weights(0).data()[0] - 15.0).abs() < 1e-8);

        // at the perfect fit the gradient vanishes
        let perfect = single_identity_layer(1.0 / 3.0, 0.0);
        let loss0 = |net: &Mlp<f64>| {
            let y = net.predict(&[3.0]).unwrap();
            mse_loss(&[1.0], &y).unwrap()
        };
        let g0 = finite_diff_grad(&perfect, loss0, 1e-6);
        assert!(g0.to_vec().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn backward_matches_finite_differences_on_random_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let activation = if trial % 2 == 0 {
                Activation::Tanh
            } else {
                Activation::ReLU
            };
            let hidden = 2 + trial % 3;
            let m = Mlp::<f64>::init(&[3, hidden, 1], activation, trial as u64).unwrap();
            assert!(m.param_count() <= 50);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = vec![rng.gen_range(-1.0..1.0)];

            let (y, cache) = m.forward(&x).unwrap();
            let dl_dy: Vec<f64> = y.iter().zip(&t).map(|(&p, &t)| p - t).collect();
            let (analytic, _) = m.backward(&cache, &dl_dy).unwrap();

            let tx = t.clone();
            let xx = x.clone();
            let numeric = finite_diff_grad(
                &m,
                move |net| {
                    let y = net.predict(&xx).unwrap();
                    mse_loss(&tx, &y).unwrap()
                },
                1e-6,
            );
            let max_err = analytic
                .to_vec()
                .iter()
                .zip(numeric.to_vec())
                .map(|(&a, n)| rel_err(a, n))
                .fold(0.0f64, f64::max);
            assert!(max_err < 1e-5, "trial {trial}: max rel err {max_err:e}");
        }
    }

    #[test]
    fn sgd_step_examples() {
        let mut m = single_identity_layer(1.0, 0.0);
        let (_, cache) = m.forward(&[1.0]).unwrap();
        let (mut g, _) = m.backward(&cache, &[1.0]).unwrap();
        g.d_weights[0].data_mut()[0] = 0.5;
        g.d_bias[0][0] = 0.0;
        m.sgd_step(&g, 0.1).unwrap();
        assert!((m.layers()[0].weights().data()[0] - 0.95).abs() < 1e-15);

        let before = m.clone();
        m.sgd_step(&g, 0.0).unwrap();
        assert_eq!(m, before);
        assert!(m.sgd_step(&g, -0.1).is_err());
    }

    #[test]
    fn sgd_converges_on_convex_problem() {
        // least squares for y = w*x + b over three points; minimizer from
        // the normal equations computed here as the oracle
        let xs = [1.0, 2.0, 3.0];
        let ys = [3.0, 5.0, 7.0]; // exactly w=2, b=1
        let mut m = single_identity_layer(0.0, 0.0);
        for _ in 0..20_000 {
            let mut acc = Gradients::zeros_like(&m);
            for (&x, &y) in xs.iter().zip(&ys) {
                let (p, cache) = m.forward(&[x]).unwrap();
                let (g, _) = m.backward(&cache, &[(p[0] - y) / 3.0]).unwrap();
                acc.add_assign(&g);
            }
            m.sgd_step(&acc, 0.05).unwrap();
        }
        assert!((m.layers()[0].weights().data()[0] - 2.0).abs() < 1e-6);
        assert!((m.layers()[0].bias()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn train_epochs_recovers_linear_generator() {
        let inputs: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64 / 16.0 - 2.0]).collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![2.0 * x[0] + 1.0]).collect();
        let mut m = Mlp::<f64>::init(&[1, 1], Activation::ReLU, 3).unwrap();
        let history = train_epochs(&mut m, &inputs, &targets, 8, 0.05, 400, 9).unwrap();
        assert_eq!(history.len(), 400);
        assert!((m.layers()[0].weights().data()[0] - 2.0).abs() < 1e-3);
        assert!((m.layers()[0].bias()[0] - 1.0).abs() < 1e-3);
        assert!(history.last().unwrap() < &1e-6);
    }

    #[test]
    fn train_epochs_determinism_and_edge_cases() {
        let inputs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![x[0] * 0.5]).collect();

        let mut a = Mlp::<f64>::init(&[1, 4, 1], Activation::Tanh, 7).unwrap();
        let unchanged = a.clone();
        let history = train_epochs(&mut a, &inputs, &targets, 4, 0.01, 0, 1).unwrap();
        assert!(history.is_empty());
        assert_eq!(a, unchanged);

        let mut b1 = Mlp::<f64>::init(&[1, 4, 1], Activation::Tanh, 7).unwrap();
        let mut b2 = Mlp::<f64>::init(&[1, 4, 1], Activation::Tanh, 7).unwrap();
        let h1 = train_epochs(&mut b1, &inputs, &targets, 4, 0.01, 5, 11).unwrap();
        let h2 = train_epochs(&mut b2, &inputs, &targets, 4, 0.01, 5, 11).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(b1, b2);

        assert!(train_epochs(&mut b1, &inputs, &targets, 0, 0.01, 1, 0).is_err());
        assert!(train_epochs(&mut b1, &[], &[], 4, 0.01, 1, 0).is_err());
    }

    #[test]
    fn full_batch_epoch_equals_full_gradient_step() {
        let inputs: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![x[0] - x[1]]).collect();
        let n = inputs.len();

        let mut trained = Mlp::<f64>::init(&[2, 3, 1], Activation::Tanh, 5).unwrap();
        let mut manual = trained.clone();
        train_epochs(&mut trained, &inputs, &targets, n, 0.01, 1, 123).unwrap();

        // full gradient accumulated in natural order
        let mut acc = Gradients::zeros_like(&manual);
        for (x, t) in inputs.iter().zip(&targets) {
            let (y, cache) = manual.forward(x).unwrap();
            let dl_dy: Vec<f64> = y.iter().zip(t).map(|(&p, &t)| (p - t) / n as f64).collect();
            let (g, _) = manual.backward(&cache, &dl_dy).unwrap();
            acc.add_assign(&g);
        }
        manual.sgd_step(&acc, 0.01).unwrap();
        assert_eq!(trained, manual);
    }

    proptest! {
        #[test]
        fn mse_nonnegative_and_zero_iff_equal(
            y in proptest::collection::vec(-100.0f64..100.0, 1..20),
            noise in proptest::collection::vec(-1.0f64..1.0, 1..20),
        ) {
            let n = y.len().min(noise.len());
            let yhat: Vec<f64> = y[..n].iter().zip(&noise[..n]).map(|(a, b)| a + b).collect();
            let loss = mse_loss(&y[..n], &yhat).unwrap();
            prop_assert!(loss >= 0.0);
            let selfloss = mse_loss(&y[..n], &y[..n]).unwrap();
            prop_assert_eq!(selfloss, 0.0);
            if noise[..n].iter().any(|&d| d != 0.0) {
                prop_assert!(loss > 0.0);
            }
        }
    }
}
