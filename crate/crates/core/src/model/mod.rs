//! Signed graph convolutional classifier.
//!
//! A shared symmetric mask `M = logistic(½(R + Rᵀ))` gates both adjacency
//! channels. Two signed convolutions
//! `H' = act(Ã⁺·H·W₊ + Ã⁻·H·W₋ + 1·bᵀ)` start from one-hot node features
//! `H⁰ = I`, node embeddings are mean-pooled, and a two-layer MLP produces
//! class logits followed by a softmax.

pub mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::SignedGraph;
use crate::numerics::{DenseMatrix, RngStream, Scalar};

/// Nonlinearity used after both convolutions and the MLP hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// Linear network; used to isolate the linear algebra in gradient checks.
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    /// Derivative at `x`; the ReLU subgradient at 0 is taken as 0.
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu if x > T::zero() => T::one(),
            Activation::Relu => T::zero(),
            Activation::Identity => T::one(),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub parcels: usize,
    pub classes: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
}

impl ModelDims {
    /// Default widths 64 / 64 / 32.
    pub fn new(parcels: usize, classes: usize) -> Self {
        Self {
            parcels,
            classes,
            conv1: 64,
            conv2: 64,
            hidden: 32,
        }
    }
}

pub const NUM_TENSORS: usize = 11;

/// Tensor names in declaration (and checkpoint) order.
pub const TENSOR_NAMES: [&str; NUM_TENSORS] = [
    "mask_raw",
    "w_plus_1",
    "w_minus_1",
    "b_1",
    "w_plus_2",
    "w_minus_2",
    "b_2",
    "w_mlp_1",
    "b_mlp_1",
    "w_mlp_2",
    "b_mlp_2",
];

/// Whether decoupled weight decay applies to each tensor: weights only.
pub const DECAYED: [bool; NUM_TENSORS] = [
    false, true, true, false, true, true, false, true, false, true, false,
];

/// All trainable tensors. Biases are stored as `1 × d` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub mask_raw: DenseMatrix<T>,
    pub w_plus_1: DenseMatrix<T>,
    pub w_minus_1: DenseMatrix<T>,
    pub b_1: DenseMatrix<T>,
    pub w_plus_2: DenseMatrix<T>,
    pub w_minus_2: DenseMatrix<T>,
    pub b_2: DenseMatrix<T>,
    pub w_mlp_1: DenseMatrix<T>,
    pub b_mlp_1: DenseMatrix<T>,
    pub w_mlp_2: DenseMatrix<T>,
    pub b_mlp_2: DenseMatrix<T>,
    pub activation: Activation,
}

fn glorot<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> DenseMatrix<T> {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    DenseMatrix::from_fn(fan_in, fan_out, |_, _| T::lit(rng.uniform_range(-s, s)))
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform weights, zero biases, zero mask logits (M = 0.5).
    pub fn init(dims: ModelDims, rng: &mut RngStream) -> Self {
        let ModelDims {
            parcels: p,
            classes: c,
            conv1: d1,
            conv2: d2,
            hidden: dh,
        } = dims;
        Self {
            mask_raw: DenseMatrix::zeros(p, p),
            w_plus_1: glorot(p, d1, rng),
            w_minus_1: glorot(p, d1, rng),
            b_1: DenseMatrix::zeros(1, d1),
            w_plus_2: glorot(d1, d2, rng),
            w_minus_2: glorot(d1, d2, rng),
            b_2: DenseMatrix::zeros(1, d2),
            w_mlp_1: glorot(d2, dh, rng),
            b_mlp_1: DenseMatrix::zeros(1, dh),
            w_mlp_2: glorot(dh, c, rng),
            b_mlp_2: DenseMatrix::zeros(1, c),
            activation: Activation::Relu,
        }
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        out
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            parcels: self.mask_raw.rows(),
            classes: self.w_mlp_2.cols(),
            conv1: self.w_plus_1.cols(),
            conv2: self.w_plus_2.cols(),
            hidden: self.w_mlp_1.cols(),
        }
    }

    pub fn tensors(&self) -> [&DenseMatrix<T>; NUM_TENSORS] {
        [
            &self.mask_raw,
            &self.w_plus_1,
            &self.w_minus_1,
            &self.b_1,
            &self.w_plus_2,
            &self.w_minus_2,
            &self.b_2,
            &self.w_mlp_1,
            &self.b_mlp_1,
            &self.w_mlp_2,
            &self.b_mlp_2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut DenseMatrix<T>; NUM_TENSORS] {
        [
            &mut self.mask_raw,
            &mut self.w_plus_1,
            &mut self.w_minus_1,
            &mut self.b_1,
            &mut self.w_plus_2,
            &mut self.w_minus_2,
            &mut self.b_2,
            &mut self.w_mlp_1,
            &mut self.b_mlp_1,
            &mut self.w_mlp_2,
            &mut self.b_mlp_2,
        ]
    }

    /// Checks every tensor shape against `dims()` and finiteness.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        let expected = [
            (d.parcels, d.parcels),
            (d.parcels, d.conv1),
            (d.parcels, d.conv1),
            (1, d.conv1),
            (d.conv1, d.conv2),
            (d.conv1, d.conv2),
            (1, d.conv2),
            (d.conv2, d.hidden),
            (1, d.hidden),
            (d.hidden, d.classes),
            (1, d.classes),
        ];
        for ((t, shape), name) in self.tensors().iter().zip(expected).zip(TENSOR_NAMES) {
            if t.shape() != shape {
                return Err(Error::Invariant(format!(
                    "{name} is {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Invariant(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Forces `mask_raw` back to exact symmetry.
    pub fn symmetrize_mask(&mut self) {
        self.mask_raw = self.mask_raw.symmetrized().expect("mask is square");
    }

    /// The gating mask `M` in (0, 1).
    pub fn mask(&self) -> DenseMatrix<T> {
        materialize_mask(&self.mask_raw)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            mask_raw: self.mask_raw.cast(),
            w_plus_1: self.w_plus_1.cast(),
            w_minus_1: self.w_minus_1.cast(),
            b_1: self.b_1.cast(),
            w_plus_2: self.w_plus_2.cast(),
            w_minus_2: self.w_minus_2.cast(),
            b_2: self.b_2.cast(),
            w_mlp_1: self.w_mlp_1.cast(),
            b_mlp_1: self.b_mlp_1.cast(),
            w_mlp_2: self.w_mlp_2.cast(),
            b_mlp_2: self.b_mlp_2.cast(),
            activation: self.activation,
        }
    }
}

pub fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `M = logistic(½(R + Rᵀ))`, equal to `logistic(R)` for symmetric `R`.
pub fn materialize_mask<T: Scalar>(mask_raw: &DenseMatrix<T>) -> DenseMatrix<T> {
    mask_raw
        .symmetrized()
        .expect("mask logits are square")
        .map(logistic)
}

/// Elementwise gating `(A⁺ ⊙ M, A⁻ ⊙ M)`.
pub fn gate<T: Scalar>(
    a_plus: &DenseMatrix<T>,
    a_minus: &DenseMatrix<T>,
    mask: &DenseMatrix<T>,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    Ok((a_plus.hadamard(mask)?, a_minus.hadamard(mask)?))
}

/// Intermediates of one signed convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvOutput<T> {
    /// `Ã⁺·H`
    pub agg_plus: DenseMatrix<T>,
    /// `Ã⁻·H`
    pub agg_minus: DenseMatrix<T>,
    pub pre: DenseMatrix<T>,
    pub out: DenseMatrix<T>,
}

pub fn signed_conv<T: Scalar>(
    h: &DenseMatrix<T>,
    gated_plus: &DenseMatrix<T>,
    gated_minus: &DenseMatrix<T>,
    w_plus: &DenseMatrix<T>,
    w_minus: &DenseMatrix<T>,
    bias: &DenseMatrix<T>,
    activation: Activation,
) -> Result<ConvOutput<T>> {
    if w_plus.shape() != w_minus.shape() {
        return Err(Error::shape("signed_conv weights", w_plus.shape(), w_minus.shape()));
    }
    if bias.shape() != (1, w_plus.cols()) {
        return Err(Error::shape("signed_conv bias", bias.shape(), (1, w_plus.cols())));
    }
    let agg_plus = gated_plus.matmul(h)?;
    let agg_minus = gated_minus.matmul(h)?;
    let mut pre = agg_plus.matmul(w_plus)?;
    pre.add_assign(&agg_minus.matmul(w_minus)?)?;
    for i in 0..pre.rows() {
        for (v, &b) in pre.row_mut(i).iter_mut().zip(bias.data()) {
            *v = *v + b;
        }
    }
    let out = pre.map(|x| activation.apply(x));
    Ok(ConvOutput {
        agg_plus,
        agg_minus,
        pre,
        out,
    })
}

/// Every intermediate of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache<T> {
    pub mask: DenseMatrix<T>,
    pub gated_plus: DenseMatrix<T>,
    pub gated_minus: DenseMatrix<T>,
    pub conv1: ConvOutput<T>,
    pub conv2: ConvOutput<T>,
    /// Mean-pooled node embedding `g`.
    pub pooled: Vec<T>,
    pub hidden_pre: Vec<T>,
    pub hidden: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

/// `x·W + b` for a row vector `x`.
fn affine<T: Scalar>(x: &[T], w: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<Vec<T>> {
    if x.len() != w.rows() || b.shape() != (1, w.cols()) {
        return Err(Error::shape("affine", (1, x.len()), w.shape()));
    }
    let mut out = b.data().to_vec();
    for (k, &xk) in x.iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(w.row(k)) {
            *o = *o + xk * wv;
        }
    }
    Ok(out)
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&f| (f - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Forward pass on raw adjacency channels.
pub fn forward_channels<T: Scalar>(
    params: &ModelParams<T>,
    a_plus: &DenseMatrix<T>,
    a_minus: &DenseMatrix<T>,
) -> Result<ForwardCache<T>> {
    let p = params.mask_raw.rows();
    if a_plus.shape() != (p, p) {
        return Err(Error::shape("forward adjacency", a_plus.shape(), (p, p)));
    }
    let act = params.activation;
    let mask = params.mask();
    let (gated_plus, gated_minus) = gate(a_plus, a_minus, &mask)?;
    let h0 = DenseMatrix::identity(p);
    let conv1 = signed_conv(
        &h0,
        &gated_plus,
        &gated_minus,
        &params.w_plus_1,
        &params.w_minus_1,
        &params.b_1,
        act,
    )?;
    let conv2 = signed_conv(
        &conv1.out,
        &gated_plus,
        &gated_minus,
        &params.w_plus_2,
        &params.w_minus_2,
        &params.b_2,
        act,
    )?;
    let inv_p = T::one() / T::from_usize(p).unwrap();
    let pooled: Vec<T> = conv2.out.column_sums().into_iter().map(|s| s * inv_p).collect();
    let hidden_pre = affine(&pooled, &params.w_mlp_1, &params.b_mlp_1)?;
    let hidden: Vec<T> = hidden_pre.iter().map(|&x| act.apply(x)).collect();
    let logits = affine(&hidden, &params.w_mlp_2, &params.b_mlp_2)?;
    let probs = softmax(&logits);
    Ok(ForwardCache {
        mask,
        gated_plus,
        gated_minus,
        conv1,
        conv2,
        pooled,
        hidden_pre,
        hidden,
        logits,
        probs,
    })
}

pub fn forward<T: Scalar>(params: &ModelParams<T>, graph: &SignedGraph<T>) -> Result<ForwardCache<T>> {
    forward_channels(params, &graph.a_plus, &graph.a_minus)
}

/// Index of the largest probability; lowest index wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
