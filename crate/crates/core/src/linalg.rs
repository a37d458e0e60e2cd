//! Dense vector/matrix primitives with paired forward and backward passes.
//!
//! Everything here is `f64` and allocation-light. Backward functions return
//! the analytic gradient of `<upstream, forward(..)>` with respect to each
//! input, so they can be checked directly against
//! [`finite_difference_gradient`].

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::{Error, Result};

/// A finite, owned vector of reals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseVector {
    values: Vec<f64>,
}

impl DenseVector {
    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "vector entry", index: i });
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    /// One-hot vector of length `len` at `index`.
    pub fn one_hot(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::IndexOutOfRange { what: "one-hot index", index, len });
        }
        let mut v = Self::zeros(len);
        v.values[index] = 1.0;
        Ok(v)
    }

    /// Internal constructor for values produced by finite arithmetic.
    pub(crate) fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.values.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    /// Index of the largest entry, ties resolved toward the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((i, v)),
            }
        }
        best.map(|(i, _)| i)
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Row-major matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape {
                what: "matrix storage",
                expected: rows * cols,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "matrix entry", index: i });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    /// The `n × n` prefix-mask matrix: entry `(i, j)` is 1 when `j <= i`.
    pub fn lower_triangular_ones(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                m.values[i * n + j] = 1.0;
            }
        }
        m
    }

    pub(crate) fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `selfᵀ · x` where `x` has length `rows`.
    pub fn transpose_mul(&self, x: &[f64]) -> Result<DenseVector> {
        if x.len() != self.rows {
            return Err(Error::Shape { what: "transpose product input", expected: self.rows, actual: x.len() });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += w * xr;
            }
        }
        Ok(DenseVector::from_vec(out))
    }

    /// `self · y` where `y` has length `cols`.
    pub fn mul(&self, y: &[f64]) -> Result<DenseVector> {
        if y.len() != self.cols {
            return Err(Error::Shape { what: "matrix product input", expected: self.cols, actual: y.len() });
        }
        Ok(DenseVector::from_vec((0..self.rows).map(|r| dot(self.row(r), y)).collect()))
    }
}

/// Pointwise nonlinearity applied after an affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Gradients of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub input: DenseVector,
    pub weights: DenseMatrix,
    pub bias: DenseVector,
}

fn check_affine(x: &[f64], w: &DenseMatrix, b: &[f64]) -> Result<()> {
    if w.rows() != x.len() {
        return Err(Error::Shape { what: "affine input", expected: w.rows(), actual: x.len() });
    }
    if w.cols() != b.len() {
        return Err(Error::Shape { what: "affine bias", expected: w.cols(), actual: b.len() });
    }
    Ok(())
}

/// `activation(Wᵀx + b)`; `W` is `len(x) × len(b)`.
pub fn affine_forward(x: &[f64], w: &DenseMatrix, b: &[f64], activation: Activation) -> Result<DenseVector> {
    check_affine(x, w, b)?;
    let mut out = w.transpose_mul(x)?.into_vec();
    for (o, bias) in out.iter_mut().zip(b) {
        *o = activation.apply(*o + bias);
    }
    Ok(DenseVector::from_vec(out))
}

/// Backward pass of [`affine_forward`] for the given upstream gradient.
pub fn affine_backward(
    x: &[f64],
    w: &DenseMatrix,
    b: &[f64],
    activation: Activation,
    upstream: &[f64],
) -> Result<AffineGrads> {
    let out = affine_forward(x, w, b, activation)?;
    affine_backward_from_output(x, w, &out, activation, upstream)
}

/// Same as [`affine_backward`] but reuses a cached forward output.
pub(crate) fn affine_backward_from_output(
    x: &[f64],
    w: &DenseMatrix,
    out: &[f64],
    activation: Activation,
    upstream: &[f64],
) -> Result<AffineGrads> {
    if upstream.len() != w.cols() {
        return Err(Error::Shape { what: "affine upstream gradient", expected: w.cols(), actual: upstream.len() });
    }
    let dz: Vec<f64> = upstream
        .iter()
        .zip(out)
        .map(|(g, y)| g * activation.derivative_from_output(*y))
        .collect();
    let grad_w = DenseMatrix::from_fn(w.rows(), w.cols(), |i, k| x[i] * dz[k]);
    let grad_x = w.mul(&dz)?;
    Ok(AffineGrads { input: grad_x, weights: grad_w, bias: DenseVector::from_vec(dz) })
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(v: &[f64]) -> Result<DenseVector> {
    if v.is_empty() {
        return Err(Error::Empty { what: "softmax input" });
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| libm::exp(x - max)).collect();
    let sum: f64 = exps.iter().sum();
    Ok(DenseVector::from_vec(exps.into_iter().map(|e| e / sum).collect()))
}

/// `softmax(v / temperature)`.
pub fn temperated_softmax(v: &[f64], temperature: f64) -> Result<DenseVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter("temperature must be a positive finite real"));
    }
    if temperature == 1.0 {
        return softmax(v);
    }
    let scaled: Vec<f64> = v.iter().map(|x| x / temperature).collect();
    softmax(&scaled)
}

/// Gradient on the logits of `temperated_softmax` given its output `probs`
/// and an upstream gradient on that output.
pub fn temperated_softmax_backward(probs: &[f64], temperature: f64, upstream: &[f64]) -> Result<DenseVector> {
    if probs.len() != upstream.len() {
        return Err(Error::Shape { what: "softmax upstream gradient", expected: probs.len(), actual: upstream.len() });
    }
    let mean = dot(probs, upstream);
    Ok(DenseVector::from_vec(
        probs.iter().zip(upstream).map(|(p, g)| p * (g - mean) / temperature).collect(),
    ))
}

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Central-difference gradient estimate of `f` at `x`.
pub fn finite_difference_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> DenseVector {
    let mut probe = x.to_vec();
    let grad = (0..x.len())
        .map(|j| {
            let orig = probe[j];
            probe[j] = orig + eps;
            let plus = f(&probe);
            probe[j] = orig - eps;
            let minus = f(&probe);
            probe[j] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect();
    DenseVector::from_vec(grad)
}

/// Largest elementwise relative error `|a-b| / max(|a|, |b|, floor)`.
///
/// The floor keeps gradients that are zero up to roundoff from dominating.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn add_scaled(acc: &mut [f64], x: &[f64], scale: f64) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}
