//! Adaptively-masked twins layer.
//!
//! Two independent MLP branches map a value's frequency features to `D`
//! selection logits. Their outputs are mixed by the frequency weight `α`
//! (high-frequency branch weighted by `α`, low-frequency branch by `1-α`),
//! the argmax of the softmax picks the kept prefix length `k+1`, and the
//! lower-triangular mask matrix turns the one-hot selection into a prefix
//! mask. Training relaxes the one-hot with a temperature softmax; in the
//! straight-through mode the forward pass still sees the exact one-hot
//! while gradients flow through the relaxation.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{temperated_softmax, temperated_softmax_backward, softmax, DenseMatrix, DenseVector};
use crate::mlp::{Mlp, MlpCache, MlpGrads};

/// One selection branch (an MLP from frequency features to `D` logits).
pub type AmlParams = Mlp;

/// Default hidden width of each selection branch.
pub const DEFAULT_AML_HIDDEN: usize = 16;

/// Parameters of one field's twins selection layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AmtlParams {
    pub high: AmlParams,
    pub low: AmlParams,
    pub temperature: f64,
    mask: DenseMatrix,
}

/// How the selection vector enters the mask during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Forward uses the hard one-hot; gradient flows through the relaxation.
    StraightThrough,
    /// Forward and backward both use the relaxed vector.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub logits: DenseVector,
    /// `softmax(logits)`.
    pub probs: DenseVector,
    /// `softmax(logits / T)`.
    pub soft: DenseVector,
    /// One-hot at `k`.
    pub hard: DenseVector,
    /// Selected index; the kept prefix has length `k + 1`.
    pub k: usize,
}

/// Per-branch activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AmtlCache {
    pub alpha: f64,
    high: MlpCache,
    low: MlpCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmtlGrads {
    pub high: MlpGrads,
    pub low: MlpGrads,
}

impl AmtlGrads {
    pub fn zeros_like(params: &AmtlParams) -> Self {
        Self { high: MlpGrads::zeros_like(&params.high), low: MlpGrads::zeros_like(&params.low) }
    }

    pub fn add_scaled(&mut self, other: &AmtlGrads, scale: f64) {
        self.high.add_scaled(&other.high, scale);
        self.low.add_scaled(&other.low, scale);
    }

    pub fn scale(&mut self, factor: f64) {
        self.high.scale(factor);
        self.low.scale(factor);
    }
}

/// Everything produced when turning one value's frequency features into a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskForward {
    pub selection: SelectionResult,
    /// The selection vector the mask was built from (hard or relaxed).
    pub selector: DenseVector,
    pub mask: DenseVector,
    pub cache: AmtlCache,
}

impl AmtlParams {
    /// Both branches are `features → hidden.. → dim`, initialized independently.
    pub fn init(
        features: usize,
        hidden: &[usize],
        dim: usize,
        temperature: f64,
        rng_high: &mut impl Rng,
        rng_low: &mut impl Rng,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("embedding dimension must be positive"));
        }
        if !(temperature > 0.0) {
            return Err(Error::Parameter("temperature must be positive"));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(features);
        widths.extend_from_slice(hidden);
        widths.push(dim);
        Ok(Self {
            high: Mlp::init_uniform(&widths, rng_high),
            low: Mlp::init_uniform(&widths, rng_low),
            temperature,
            mask: DenseMatrix::lower_triangular_ones(dim),
        })
    }

    /// Assembles parameters from existing branches; both must share a shape.
    pub fn from_branches(high: AmlParams, low: AmlParams, temperature: f64) -> Result<Self> {
        let same_shape = high.layers.len() == low.layers.len()
            && high
                .layers
                .iter()
                .zip(&low.layers)
                .all(|(a, b)| a.input_dim() == b.input_dim() && a.output_dim() == b.output_dim());
        if !same_shape || high.output_dim() == 0 {
            return Err(Error::Contract("twins branches must have identical, non-empty shapes"));
        }
        if !(temperature > 0.0) {
            return Err(Error::Parameter("temperature must be positive"));
        }
        let dim = high.output_dim();
        Ok(Self { high, low, temperature, mask: DenseMatrix::lower_triangular_ones(dim) })
    }

    pub fn dim(&self) -> usize {
        self.mask.rows()
    }

    pub fn mask_matrix(&self) -> &DenseMatrix {
        &self.mask
    }

    /// Full training-time pipeline for one value: logits → selection → mask.
    pub fn forward_mask(&self, features: &[f64], alpha: f64, mode: SelectionMode) -> Result<MaskForward> {
        let (logits, cache) = amtl_logits(self, features, alpha)?;
        let selection = select(&logits, self.temperature)?;
        let selector = match mode {
            SelectionMode::StraightThrough => ste_combine(&selection.soft, &selection.hard)?,
            SelectionMode::Relaxed => selection.soft.clone(),
        };
        let mask = mask_from_selection(&selector, &self.mask)?;
        Ok(MaskForward { selection, selector, mask, cache })
    }

    /// Backward of [`forward_mask`](Self::forward_mask) given `∂loss/∂mask`.
    ///
    /// In both modes the selector's gradient is routed to the relaxed vector.
    pub fn backward_mask(&self, fwd: &MaskForward, grad_mask: &[f64]) -> Result<AmtlGrads> {
        let grad_logits = self.mask_grad_to_logits(fwd, grad_mask)?;
        amtl_backward(self, &fwd.cache, &grad_logits)
    }

    /// `∂loss/∂logits` for a given `∂loss/∂mask`.
    pub fn mask_grad_to_logits(&self, fwd: &MaskForward, grad_mask: &[f64]) -> Result<DenseVector> {
        let grad_selector = self.mask.mul(grad_mask)?;
        temperated_softmax_backward(&fwd.selection.soft, self.temperature, &grad_selector)
    }

    /// Inference-time selection: hard path only.
    pub fn select_hard(&self, features: &[f64], alpha: f64) -> Result<usize> {
        let (logits, _) = amtl_logits(self, features, alpha)?;
        let probs = softmax(&logits)?;
        Ok(probs.argmax().expect("dim is positive"))
    }
}

/// Mixed logits `α·h_high(s) + (1-α)·h_low(s)`, with both branch caches.
pub fn amtl_logits(params: &AmtlParams, features: &[f64], alpha: f64) -> Result<(DenseVector, AmtlCache)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter("alpha must lie in [0, 1]"));
    }
    if features.len() != params.high.input_dim() {
        return Err(Error::Shape { what: "frequency features", expected: params.high.input_dim(), actual: features.len() });
    }
    let high = params.high.forward_cached(features)?;
    let low = params.low.forward_cached(features)?;
    let logits = high
        .output()
        .iter()
        .zip(low.output())
        .map(|(h, l)| alpha * h + (1.0 - alpha) * l)
        .collect();
    Ok((DenseVector::from_vec(logits), AmtlCache { alpha, high, low }))
}

/// Gradients of both branches given `∂loss/∂logits`; each branch's share is
/// scaled by its mixing weight.
pub fn amtl_backward(params: &AmtlParams, cache: &AmtlCache, grad_logits: &[f64]) -> Result<AmtlGrads> {
    if grad_logits.len() != params.dim() {
        return Err(Error::Shape { what: "logit gradient", expected: params.dim(), actual: grad_logits.len() });
    }
    let a = cache.alpha;
    let up_high: Vec<f64> = grad_logits.iter().map(|g| a * g).collect();
    let up_low: Vec<f64> = grad_logits.iter().map(|g| (1.0 - a) * g).collect();
    let (_, high) = params.high.backward(&cache.high, &up_high)?;
    let (_, low) = params.low.backward(&cache.low, &up_low)?;
    Ok(AmtlGrads { high, low })
}

/// Softmax probabilities, relaxed selection and hard one-hot for `logits`.
/// Ties in the argmax go to the lower index.
pub fn select(logits: &[f64], temperature: f64) -> Result<SelectionResult> {
    let probs = softmax(logits)?;
    let soft = temperated_softmax(logits, temperature)?;
    let k = probs.argmax().expect("softmax input is non-empty");
    let hard = DenseVector::one_hot(logits.len(), k)?;
    Ok(SelectionResult { logits: DenseVector::from_vec(logits.to_vec()), probs, soft, hard, k })
}

/// Straight-through combination `soft + stop_gradient(hard - soft)`.
///
/// The forward value is exactly `hard`. On the backward pass the whole
/// upstream gradient goes to `soft`; `hard` receives none.
pub fn ste_combine(soft: &[f64], hard: &[f64]) -> Result<DenseVector> {
    if soft.len() != hard.len() {
        return Err(Error::Shape { what: "straight-through inputs", expected: soft.len(), actual: hard.len() });
    }
    let ones = hard.iter().filter(|v| **v == 1.0).count();
    let zeros = hard.iter().filter(|v| **v == 0.0).count();
    if ones != 1 || ones + zeros != hard.len() {
        return Err(Error::Contract("hard selection must be exactly one-hot"));
    }
    Ok(DenseVector::from_vec(hard.to_vec()))
}

/// `Mᵀ t`; for a one-hot `t` at `k` this is the prefix mask of length `k+1`.
pub fn mask_from_selection(t: &[f64], mask_matrix: &DenseMatrix) -> Result<DenseVector> {
    mask_matrix.transpose_mul(t)
}

/// Elementwise `m ⊙ e`. Zero products are stored as `+0.0`, so masked
/// entries are bit-identical to re-padded zeros.
pub fn apply_mask(embedding: &[f64], mask: &[f64]) -> Result<DenseVector> {
    if embedding.len() != mask.len() {
        return Err(Error::Shape { what: "mask", expected: embedding.len(), actual: mask.len() });
    }
    Ok(DenseVector::from_vec(
        embedding
            .iter()
            .zip(mask)
            .map(|(e, m)| match e * m {
                v if v == 0.0 => 0.0,
                v => v,
            })
            .collect(),
    ))
}

/// Prefix mask with ones at indices `0..=k`.
pub fn prefix_mask(dim: usize, k: usize) -> DenseVector {
    DenseVector::from_vec((0..dim).map(|j| if j <= k { 1.0 } else { 0.0 }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, finite_difference_gradient, max_relative_error, Activation};
    use crate::mlp::Layer;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64, dim: usize) -> AmtlParams {
        let mut a = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ChaCha8Rng::seed_from_u64(seed + 1000);
        AmtlParams::init(2, &[6], dim, 0.5, &mut a, &mut b).unwrap()
    }

    #[test]
    fn logits_extreme_alphas_pick_one_branch() {
        let p = params(1, 5);
        let s = [0.3, 0.7];
        let (l1, _) = amtl_logits(&p, &s, 1.0).unwrap();
        assert_eq!(l1.as_slice(), p.high.forward(&s).unwrap().as_slice());
        let (l0, _) = amtl_logits(&p, &s, 0.0).unwrap();
        assert_eq!(l0.as_slice(), p.low.forward(&s).unwrap().as_slice());
        assert!(amtl_logits(&p, &s, 1.5).is_err());
        assert!(matches!(amtl_logits(&p, &[0.1], 0.5), Err(Error::Shape { .. })));
    }

    #[test]
    fn logits_half_alpha_is_mean_of_identity_branches() {
        let branch = |w: Vec<f64>, b: Vec<f64>| Mlp {
            layers: vec![Layer {
                weights: DenseMatrix::new(2, 2, w).unwrap(),
                bias: DenseVector::new(b).unwrap(),
                activation: Activation::Identity,
            }],
        };
        let high = branch(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]);
        let low = branch(vec![2.0, 0.0, 0.0, 2.0], vec![1.0, -1.0]);
        let p = AmtlParams::from_branches(high, low, 1.0).unwrap();
        let (l, _) = amtl_logits(&p, &[0.5, -0.25], 0.5).unwrap();
        // high -> [0.5, -0.25]; low -> [2.0, -1.5]
        assert_eq!(l.as_slice(), &[1.25, -0.875]);
    }

    #[test]
    fn select_examples() {
        let s = select(&[0.7; 4], 0.2).unwrap();
        assert_eq!(s.k, 0);
        assert_eq!(s.hard.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        let s = select(&[0.0, 10.0, 0.0], 0.2).unwrap();
        assert_eq!((s.k, s.hard.as_slice()), (1, &[0.0, 1.0, 0.0][..]));
        let s = select(&[1.0, 2.0, 3.0], 0.5).unwrap();
        assert_eq!(s.k, 2);
        let e: Vec<f64> = [2.0f64, 4.0, 6.0].iter().map(|v| v.exp()).collect();
        let z: f64 = e.iter().sum();
        let direct: Vec<f64> = e.iter().map(|v| v / z).collect();
        assert!(max_relative_error(&s.soft, &direct, 0.0) < 1e-14);
        assert!((s.soft[2] - 0.8668133321973348).abs() < 1e-15);
        assert!((s.soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ste_examples() {
        assert_eq!(ste_combine(&[0.6, 0.4], &[1.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(ste_combine(&[0.0, 1.0], &[0.0, 1.0]).unwrap().as_slice(), &[0.0, 1.0]);
        assert!(matches!(ste_combine(&[0.5, 0.5], &[0.5, 0.5]), Err(Error::Contract(_))));
        assert!(matches!(ste_combine(&[0.5, 0.5], &[1.0, 1.0]), Err(Error::Contract(_))));
        assert!(matches!(ste_combine(&[1.0], &[1.0, 0.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn ste_gradient_follows_the_relaxation() {
        // Surrogate: loss(logits) = <g, softmax(logits / T)>; the STE routes g to soft.
        let logits = [0.3, -0.4, 1.1, 0.2, 0.0];
        let g = [0.5, -1.0, 0.25, 2.0, -0.75];
        let t = 0.3;
        let sel = select(&logits, t).unwrap();
        let analytic = temperated_softmax_backward(&sel.soft, t, &g).unwrap();
        let fd = finite_difference_gradient(|l| dot(&temperated_softmax(l, t).unwrap(), &g), &logits, 1e-4);
        assert!(max_relative_error(&analytic, &fd, 1e-6) < 1e-3);
    }

    #[test]
    fn mask_examples() {
        let m = DenseMatrix::lower_triangular_ones(4);
        let t = DenseVector::one_hot(4, 1).unwrap();
        assert_eq!(mask_from_selection(&t, &m).unwrap().as_slice(), &[1.0, 1.0, 0.0, 0.0]);
        let t = DenseVector::one_hot(4, 3).unwrap();
        assert_eq!(mask_from_selection(&t, &m).unwrap().as_slice(), &[1.0; 4]);
        let m3 = DenseMatrix::lower_triangular_ones(3);
        assert_eq!(mask_from_selection(&[0.5, 0.5, 0.0], &m3).unwrap().as_slice(), &[1.0, 0.5, 0.0]);
        assert!(mask_from_selection(&[1.0, 0.0], &m3).is_err());
    }

    #[test]
    fn apply_mask_examples() {
        let e = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(apply_mask(&e, &[1.0; 4]).unwrap().as_slice(), &e);
        assert_eq!(apply_mask(&e, &[1.0, 0.0, 0.0, 0.0]).unwrap().as_slice(), &[0.1, 0.0, 0.0, 0.0]);
        assert!(apply_mask(&e, &[1.0]).is_err());
        // d<g, m ⊙ e>/de = m ⊙ g
        let m = [1.0, 1.0, 0.0, 0.0];
        let g = [0.3, -0.2, 0.9, 0.5];
        let fd = finite_difference_gradient(|x| dot(&apply_mask(x, &m).unwrap(), &g), &e, 1e-4);
        let expected: Vec<f64> = m.iter().zip(&g).map(|(a, b)| a * b).collect();
        assert!(fd.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn backward_extreme_alphas_zero_a_branch() {
        let p = params(3, 6);
        let s = [0.2, -0.4];
        let g = [1.0, -0.5, 0.3, 0.0, 0.2, 0.1];
        let (_, c) = amtl_logits(&p, &s, 1.0).unwrap();
        let grads = amtl_backward(&p, &c, &g).unwrap();
        assert!(grads.low.is_zero() && !grads.high.is_zero());
        let (_, c) = amtl_logits(&p, &s, 0.0).unwrap();
        let grads = amtl_backward(&p, &c, &g).unwrap();
        assert!(grads.high.is_zero() && !grads.low.is_zero());
    }

    fn branch_params(m: &Mlp) -> Vec<f64> {
        m.layers.iter().flat_map(|l| l.weights.as_slice().iter().chain(l.bias.iter()).copied()).collect()
    }

    fn set_branch(m: &mut Mlp, v: &[f64]) {
        let mut pos = 0;
        for l in &mut m.layers {
            let n = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&v[pos..pos + n]);
            pos += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&v[pos..pos + n]);
            pos += n;
        }
    }

    #[test]
    fn backward_matches_surrogate_finite_differences() {
        let p = params(5, 6);
        let s = [0.8, 0.1];
        let alpha = 0.3;
        let e = [0.4, -0.3, 0.2, 0.9, -0.6, 0.1];
        let g = [0.5, 1.0, -0.7, 0.3, -0.2, 0.8];
        // Surrogate loss: <g, (Mᵀ t̂) ⊙ e>
        let loss = |p: &AmtlParams| {
            let f = p.forward_mask(&s, alpha, SelectionMode::Relaxed).unwrap();
            dot(&apply_mask(&e, &f.mask).unwrap(), &g)
        };
        let fwd = p.forward_mask(&s, alpha, SelectionMode::Relaxed).unwrap();
        let grad_mask: Vec<f64> = e.iter().zip(&g).map(|(a, b)| a * b).collect();
        let grads = p.backward_mask(&fwd, &grad_mask).unwrap();

        for (which, analytic) in [(0, &grads.high), (1, &grads.low)] {
            let theta = branch_params(if which == 0 { &p.high } else { &p.low });
            let fd = finite_difference_gradient(
                |v| {
                    let mut q = p.clone();
                    set_branch(if which == 0 { &mut q.high } else { &mut q.low }, v);
                    loss(&q)
                },
                &theta,
                1e-4,
            );
            let a: Vec<f64> = analytic
                .layers
                .iter()
                .flat_map(|l| l.weights.as_slice().iter().chain(l.bias.iter()).copied())
                .collect();
            assert!(max_relative_error(&a, &fd, 1e-6) < 1e-3, "branch {which}");
        }
    }

    #[test]
    fn identical_branches_split_gradient_by_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let branch = Mlp::init_uniform(&[2, 16, 8], &mut rng);
        let p = AmtlParams::from_branches(branch.clone(), branch, 0.2).unwrap();
        let g = [0.1, -0.4, 0.2, 0.3, -0.1, 0.5, 0.0, -0.2];
        for alpha in [0.1, 0.3, 0.5, 0.8] {
            let (_, c) = amtl_logits(&p, &[0.4, 0.6], alpha).unwrap();
            let grads = amtl_backward(&p, &c, &g).unwrap();
            let ratio = libm::sqrt(grads.high.norm_squared() / grads.low.norm_squared());
            assert!((ratio - alpha / (1.0 - alpha)).abs() < 1e-12 * ratio.max(1.0));
        }
    }

    #[test]
    fn straight_through_forward_uses_hard_mask() {
        let p = params(11, 8);
        let f = p.forward_mask(&[0.2, 0.9], 0.6, SelectionMode::StraightThrough).unwrap();
        assert_eq!(f.selector, f.selection.hard);
        assert_eq!(f.mask, prefix_mask(8, f.selection.k));
        assert_eq!(p.select_hard(&[0.2, 0.9], 0.6).unwrap(), f.selection.k);
    }

    #[test]
    fn one_hot_masks_match_prefix_definition() {
        for d in 1..=16 {
            let m = DenseMatrix::lower_triangular_ones(d);
            for k in 0..d {
                let t = DenseVector::one_hot(d, k).unwrap();
                assert_eq!(mask_from_selection(&t, &m).unwrap(), prefix_mask(d, k));
            }
        }
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_shift_and_scale(
            logits in prop::collection::vec(-5.0f64..5.0, 1..20),
            c in -50.0f64..50.0,
            lambda in 0.01f64..100.0,
        ) {
            let k = select(&logits, 0.2).unwrap().k;
            // Shifts and scales can merge nearly equal logits; compare against the exact argmax set.
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let scaled: Vec<f64> = logits.iter().map(|v| v * lambda).collect();
            let gap = logits.iter().filter(|v| **v < max).map(|v| max - v).fold(f64::INFINITY, f64::min);
            prop_assume!(gap > 1e-9);
            prop_assert_eq!(select(&shifted, 0.2).unwrap().k, k);
            prop_assert_eq!(select(&scaled, 0.2).unwrap().k, k);
        }

        #[test]
        fn hard_masked_embedding_has_zero_suffix(
            e in prop::collection::vec(-1.0f64..1.0, 1..16),
            seed in 0u64..1000,
        ) {
            let d = e.len();
            let k = (seed as usize) % d;
            let m = mask_from_selection(&DenseVector::one_hot(d, k).unwrap(), &DenseMatrix::lower_triangular_ones(d)).unwrap();
            let masked = apply_mask(&e, &m).unwrap();
            prop_assert!(masked[k + 1..].iter().all(|v| *v == 0.0));
            prop_assert_eq!(&masked[..=k], &e[..=k]);
        }

        #[test]
        fn ste_forward_is_bitwise_hard(logits in prop::collection::vec(-5.0f64..5.0, 1..16), t in 0.05f64..2.0) {
            let s = select(&logits, t).unwrap();
            let out = ste_combine(&s.soft, &s.hard).unwrap();
            prop_assert!(out.iter().zip(s.hard.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
