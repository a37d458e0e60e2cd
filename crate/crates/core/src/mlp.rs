//! Stacked affine layers with cached activations for backprop.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{add_scaled, affine_backward_from_output, affine_forward, Activation, DenseMatrix, DenseVector};

/// One affine layer; `weights` is `input × output`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: DenseVector,
    pub activation: Activation,
}

impl Layer {
    /// Weights and bias drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init_uniform(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / libm::sqrt(input.max(1) as f64);
        let weights = DenseMatrix::from_fn(input, output, |_, _| rng.random_range(-bound..=bound));
        let bias = DenseVector::from_vec((0..output).map(|_| rng.random_range(-bound..=bound)).collect());
        Self { weights, bias, activation }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self { weights: DenseMatrix::zeros(input, output), bias: DenseVector::zeros(output), activation }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: DenseMatrix,
    pub bias: DenseVector,
}

/// Multilayer perceptron: tanh on hidden layers, identity on the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Activations of one forward pass: `[input, out_0, .., out_{L-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    activations: Vec<DenseVector>,
}

impl MlpCache {
    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache always holds the input")
    }
}

/// Gradients for every layer of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: DenseMatrix::zeros(l.input_dim(), l.output_dim()),
                    bias: DenseVector::zeros(l.output_dim()),
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            add_scaled(a.weights.as_mut_slice(), b.weights.as_slice(), scale);
            add_scaled(a.bias.as_mut_slice(), &b.bias, scale);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
            l.bias.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Sum of squared entries.
    pub fn norm_squared(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(l.bias.iter()))
            .map(|v| v * v)
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(l.bias.iter()))
            .all(|v| *v == 0.0)
    }
}

impl Mlp {
    /// `widths = [input, hidden.., output]`; hidden layers use tanh.
    pub fn init_uniform(widths: &[usize], rng: &mut impl Rng) -> Self {
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { Activation::Tanh };
                Layer::init_uniform(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { Activation::Tanh };
                Layer::zeros(widths[i], widths[i + 1], act)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_dim)
    }

    pub fn forward(&self, x: &[f64]) -> Result<DenseVector> {
        let mut h = DenseVector::from_vec(x.to_vec());
        for l in &self.layers {
            h = affine_forward(&h, &l.weights, &l.bias, l.activation)?;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<MlpCache> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(DenseVector::from_vec(x.to_vec()));
        for l in &self.layers {
            let next = affine_forward(activations.last().unwrap(), &l.weights, &l.bias, l.activation)?;
            activations.push(next);
        }
        Ok(MlpCache { activations })
    }

    fn check_cache(&self, cache: &MlpCache) -> Result<()> {
        let consistent = cache.activations.len() == self.layers.len() + 1
            && self
                .layers
                .iter()
                .zip(cache.activations.windows(2))
                .all(|(l, w)| w[0].len() == l.input_dim() && w[1].len() == l.output_dim());
        if !consistent {
            return Err(Error::Contract("cache does not belong to these parameters"));
        }
        Ok(())
    }

    /// Returns the gradient on the input and on every layer's parameters.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64]) -> Result<(DenseVector, MlpGrads)> {
        self.check_cache(cache)?;
        let mut grad = DenseVector::from_vec(upstream.to_vec());
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let g = affine_backward_from_output(
                &cache.activations[i],
                &l.weights,
                &cache.activations[i + 1],
                l.activation,
                &grad,
            )?;
            layers.push(LayerGrads { weights: g.weights, bias: g.bias });
            grad = g.input;
        }
        layers.reverse();
        Ok((grad, MlpGrads { layers }))
    }

    /// Gradient-descent step `θ ← θ - lr·g`.
    pub fn apply(&mut self, grads: &MlpGrads, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            add_scaled(l.weights.as_mut_slice(), g.weights.as_slice(), -lr);
            add_scaled(l.bias.as_mut_slice(), &g.bias, -lr);
        }
    }

    /// Number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }
}
