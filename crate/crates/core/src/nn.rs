//! Dense hourglass networks with a bottleneck tap.
//!
//! The network is a chain of [`DenseLayer`]s. Hidden layers use ReLU followed
//! by inverted dropout (train mode only); the head is a single sigmoid unit
//! whose output is the probability of the favourable label. The narrowest
//! hidden layer is the *bottleneck*; its activations (before dropout) are the
//! embeddings the variance loss operates on.
//!
//! Gradients are computed by hand-written reverse mode over a
//! [`ForwardCache`]. Several forward branches through the same parameters
//! (the original and the protected-flipped batch) are back-propagated
//! together and their gradients summed.

use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a = f(z)`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Sigmoid),
            2 => Ok(Activation::Identity),
            other => Err(Error::ModelFormat(format!(
                "unknown activation code {other}"
            ))),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `y = activation(x·W + b)` with `W` stored as an in×out matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if bias.len() != weights.cols() {
            return Err(Error::shape(format!(
                "bias has {} entries for a layer of width {}",
                bias.len(),
                weights.cols()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_width(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_width(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate values of one forward pass, consumed by [`Network::backward`].
///
/// A cache can be reused across calls to [`Network::forward_into`]; its
/// buffers keep their allocations.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// Input to each layer (the previous layer's activation after dropout).
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    /// Activations before dropout.
    post: Vec<Matrix>,
    /// Inverted-dropout masks (entries 0 or 1/keep), valid where `masked[k]`.
    masks: Vec<Matrix>,
    masked: Vec<bool>,
}

impl ForwardCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn batch_rows(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }

    pub fn pre_activation(&self, layer: usize) -> Option<&Matrix> {
        self.pre.get(layer)
    }

    /// Activation of `layer` before dropout.
    pub fn activation(&self, layer: usize) -> Option<&Matrix> {
        self.post.get(layer)
    }

    pub fn dropout_mask(&self, layer: usize) -> Option<&Matrix> {
        match self.masked.get(layer) {
            Some(true) => self.masks.get(layer),
            _ => None,
        }
    }

    /// Head outputs of the last forward pass.
    pub fn predictions(&self) -> &[f64] {
        self.post.last().map_or(&[], Matrix::data)
    }

    fn resize(&mut self, layers: usize) {
        for v in [
            &mut self.inputs,
            &mut self.pre,
            &mut self.post,
            &mut self.masks,
        ] {
            v.resize_with(layers, || Matrix::zeros(0, 0));
        }
        self.masked.resize(layers, false);
    }
}

/// Where hidden-layer dropout masks come from.
#[derive(Debug, Clone, Copy)]
pub enum Dropout<'a> {
    Off,
    /// Fresh masks from the dropout stream keyed on this seed.
    Seeded(u64),
    /// The masks of an earlier pass over a batch of the same size. Equivalent
    /// to `Seeded` with that pass's seed, without redrawing.
    SameAs(&'a ForwardCache),
}

impl Dropout<'_> {
    pub fn for_mode(mode: Mode, seed: u64) -> Self {
        match mode {
            Mode::Train => Dropout::Seeded(seed),
            Mode::Eval => Dropout::Off,
        }
    }
}

/// Reusable buffers for [`Network::backward_into`].
#[derive(Debug, Clone, Default)]
pub struct BackwardScratch {
    d_act: Matrix,
    d_in: Matrix,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub predictions: Vec<f64>,
    pub embeddings: Matrix,
    pub cache: ForwardCache,
}

/// Per-layer parameter gradients, shaped like the owning [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.in_width(), l.out_width()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.out_width()])
                .collect(),
        }
    }

    /// Zeroes every entry, reshaping to `net` first if needed.
    pub fn reset_for(&mut self, net: &Network) {
        if self.matches(net) {
            for s in self.slices_mut() {
                s.fill(0.0);
            }
        } else {
            *self = Self::zeros_like(net);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }

    pub fn matches(&self, net: &Network) -> bool {
        self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(k, l)| {
                self.weights[k].shape() == (l.in_width(), l.out_width())
                    && self.biases[k].len() == l.out_width()
            })
    }

    /// All gradients in the same order as [`Network::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.as_mut_slice()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<DenseLayer>,
    bottleneck_index: usize,
    dropout_rate: f64,
    l1_coeff: f64,
    l2_coeff: f64,
}

const MAGIC: &[u8; 8] = b"FVICNET1";

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    ///
    /// `widths` lists the input width, every hidden width, and the output
    /// width (which must be 1). Hidden layers are ReLU, the head is sigmoid.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::invalid(
                "need an input width, at least one hidden width and an output width",
            ));
        }
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(Error::invalid(format!("width at position {pos} is zero")));
        }
        if *widths.last().unwrap() != 1 {
            return Err(Error::invalid("output width must be 1"));
        }

        let mut rng = seed::stream(seed, Purpose::Init, &[]);
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                let data = (0..fan_in * fan_out)
                    .map(|_| dist.sample(&mut rng))
                    .collect();
                let activation = if k + 1 == n {
                    Activation::Sigmoid
                } else {
                    Activation::Relu
                };
                DenseLayer::new(
                    Matrix::from_vec(fan_in, fan_out, data)?,
                    vec![0.0; fan_out],
                    activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    /// Assembles a network from explicit layers, checking that widths chain
    /// and that the head is a single sigmoid unit.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::invalid("network needs at least one hidden layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_width() != pair[1].in_width() {
                return Err(Error::shape(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_width(),
                    k + 1,
                    pair[1].in_width()
                )));
            }
        }
        let head = layers.last().unwrap();
        if head.out_width() != 1 || head.activation() != Activation::Sigmoid {
            return Err(Error::invalid("head must be a single sigmoid unit"));
        }
        let hidden = &layers[..layers.len() - 1];
        let min_width = hidden.iter().map(DenseLayer::out_width).min().unwrap();
        let bottleneck_index = hidden
            .iter()
            .position(|l| l.out_width() == min_width)
            .unwrap();
        Ok(Self {
            layers,
            bottleneck_index,
            dropout_rate: 0.0,
            l1_coeff: 0.0,
            l2_coeff: 0.0,
        })
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::invalid(format!(
                "dropout rate {rate} outside [0, 1]"
            )));
        }
        self.dropout_rate = rate;
        Ok(self)
    }

    pub fn with_regularization(mut self, l1: f64, l2: f64) -> Result<Self> {
        if !(l1 >= 0.0 && l2 >= 0.0 && l1.is_finite() && l2.is_finite()) {
            return Err(Error::invalid(
                "regularization coefficients must be finite and >= 0",
            ));
        }
        self.l1_coeff = l1;
        self.l2_coeff = l2;
        Ok(self)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(DenseLayer::out_width))
            .collect()
    }

    pub fn bottleneck_index(&self) -> usize {
        self.bottleneck_index
    }

    pub fn bottleneck_width(&self) -> usize {
        self.layers[self.bottleneck_index].out_width()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn l1_coeff(&self) -> f64 {
        self.l1_coeff
    }

    pub fn l2_coeff(&self) -> f64 {
        self.l2_coeff
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_width() * l.out_width() + l.out_width())
            .sum()
    }

    /// All parameters, layer by layer: weights (row-major) then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::shape(format!(
                "{} parameters given, network has {}",
                params.len(),
                self.parameter_count()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.data().len());
            l.weights.data_mut().copy_from_slice(w);
            let (b, tail) = tail.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub(crate) fn parameter_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
    }

    /// Runs the batch through the network.
    ///
    /// In [`Mode::Train`] each hidden activation is multiplied by an inverted
    /// dropout mask drawn from a stream keyed on `seed`; [`Mode::Eval`]
    /// ignores `seed` and is deterministic.
    pub fn forward(&self, batch: &Matrix, mode: Mode, seed: u64) -> Result<ForwardOutput> {
        let mut cache = ForwardCache::new();
        self.forward_into(batch, Dropout::for_mode(mode, seed), &mut cache)?;
        let predictions = cache.predictions().to_vec();
        let embeddings = cache.post[self.bottleneck_index].clone();
        Ok(ForwardOutput {
            predictions,
            embeddings,
            cache,
        })
    }

    /// [`Network::forward`] into a reusable cache. Dropout applies only when
    /// the network's rate is positive.
    pub fn forward_into(
        &self,
        batch: &Matrix,
        dropout: Dropout<'_>,
        cache: &mut ForwardCache,
    ) -> Result<()> {
        if batch.cols() != self.input_width() {
            return Err(Error::shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_width()
            )));
        }
        let n = self.layers.len();
        let rows = batch.rows();
        let keep = 1.0 - self.dropout_rate;
        let mut rng = None;
        let mut shared = None;
        if self.dropout_rate > 0.0 {
            match dropout {
                Dropout::Off => {}
                Dropout::Seeded(seed) => rng = Some(seed::stream(seed, Purpose::Dropout, &[])),
                Dropout::SameAs(other) => {
                    if other.batch_rows() != rows || other.masks.len() != n {
                        return Err(Error::shape(
                            "shared dropout masks come from a different batch shape",
                        ));
                    }
                    shared = Some(other);
                }
            }
        }
        // Each u64 yields four 16-bit uniforms; P(lane < threshold) is keep
        // rounded to a multiple of 2^-16 (exact for the usual rates).
        let threshold = (keep * 65_536.0).round() as u64;
        let scale = 1.0 / keep;

        cache.resize(n);
        let ForwardCache {
            inputs,
            pre,
            post,
            masks,
            masked,
        } = cache;
        inputs[0].copy_from(batch);
        for (k, layer) in self.layers.iter().enumerate() {
            let width = layer.out_width();
            inputs[k].matmul_into(&layer.weights, &mut pre[k]);
            post[k].reshape_for(rows, width);
            let act = layer.activation;
            let rows_z = pre[k].data_mut().chunks_exact_mut(width);
            for (zr, ar) in rows_z.zip(post[k].data_mut().chunks_exact_mut(width)) {
                for ((z, a), b) in zr.iter_mut().zip(ar).zip(&layer.bias) {
                    *z += b;
                    *a = act.apply(*z);
                }
            }
            if k + 1 == n {
                masked[k] = false;
                break;
            }

            masked[k] = match (rng.as_mut(), shared) {
                (Some(rng), _) => {
                    let m = &mut masks[k];
                    m.reshape_for(rows, layer.out_width());
                    for chunk in m.data_mut().chunks_mut(4) {
                        let bits = rng.next_u64();
                        for (i, v) in chunk.iter_mut().enumerate() {
                            let lane = (bits >> (16 * i)) & 0xffff;
                            *v = if lane < threshold { scale } else { 0.0 };
                        }
                    }
                    true
                }
                (None, Some(other)) if other.masked[k] => {
                    masks[k].copy_from(&other.masks[k]);
                    true
                }
                _ => false,
            };
            let next = &mut inputs[k + 1];
            if masked[k] {
                next.reshape_for(rows, layer.out_width());
                for ((o, &a), &m) in next
                    .data_mut()
                    .iter_mut()
                    .zip(post[k].data())
                    .zip(masks[k].data())
                {
                    *o = a * m;
                }
            } else {
                next.copy_from(&post[k]);
            }
        }
        Ok(())
    }

    /// Eval-mode probabilities.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(batch, Mode::Eval, 0)?.predictions)
    }

    /// Eval-mode bottleneck embeddings.
    pub fn embed(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch, Mode::Eval, 0)?.embeddings)
    }

    /// Gradient of a scalar loss with respect to every parameter.
    ///
    /// `output_grads[b]` is ∂L/∂ŷ for branch `b`; `embedding_grad`, when
    /// present, is ∂L/∂Z for the first branch's bottleneck activations. The
    /// branches share parameters, so their contributions are summed. The L1
    /// subgradient (0 at 0) and L2 gradient of the weight penalty are added
    /// once.
    pub fn backward(
        &self,
        caches: &[&ForwardCache],
        output_grads: &[&[f64]],
        embedding_grad: Option<&Matrix>,
    ) -> Result<GradientSet> {
        let mut grads = GradientSet::zeros_like(self);
        self.backward_into(
            caches,
            output_grads,
            embedding_grad,
            &mut grads,
            &mut BackwardScratch::default(),
        )?;
        Ok(grads)
    }

    /// [`Network::backward`] into reusable buffers; `grads` is overwritten.
    pub fn backward_into(
        &self,
        caches: &[&ForwardCache],
        output_grads: &[&[f64]],
        embedding_grad: Option<&Matrix>,
        grads: &mut GradientSet,
        scratch: &mut BackwardScratch,
    ) -> Result<()> {
        if caches.len() != output_grads.len() {
            return Err(Error::shape(format!(
                "{} caches but {} output gradients",
                caches.len(),
                output_grads.len()
            )));
        }
        if embedding_grad.is_some() && caches.is_empty() {
            return Err(Error::shape(
                "embedding gradient given without a forward branch",
            ));
        }
        grads.reset_for(self);

        for (b, (cache, out_grad)) in caches.iter().zip(output_grads).enumerate() {
            let shapes_match = cache.pre.len() == self.layers.len()
                && self
                    .layers
                    .iter()
                    .zip(&cache.pre)
                    .all(|(l, z)| z.cols() == l.out_width() && z.rows() == cache.batch_rows());
            if !shapes_match {
                return Err(Error::shape("cache was produced by a different network"));
            }
            let rows = cache.batch_rows();
            if out_grad.len() != rows {
                return Err(Error::shape(format!(
                    "output gradient has {} entries for a batch of {rows}",
                    out_grad.len()
                )));
            }
            let emb = if b == 0 { embedding_grad } else { None };
            if let Some(e) = emb {
                if e.shape() != (rows, self.bottleneck_width()) {
                    return Err(Error::shape(format!(
                        "embedding gradient is {:?}, expected {:?}",
                        e.shape(),
                        (rows, self.bottleneck_width())
                    )));
                }
            }
            self.backward_branch(cache, out_grad, emb, grads, scratch);
        }

        if self.l1_coeff > 0.0 || self.l2_coeff > 0.0 {
            for (g, l) in grads.weights.iter_mut().zip(&self.layers) {
                for (gv, &w) in g.data_mut().iter_mut().zip(l.weights.data()) {
                    let sign = if w > 0.0 {
                        1.0
                    } else if w < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    *gv += self.l1_coeff * sign + 2.0 * self.l2_coeff * w;
                }
            }
        }
        Ok(())
    }

    fn backward_branch(
        &self,
        cache: &ForwardCache,
        out_grad: &[f64],
        embedding_grad: Option<&Matrix>,
        grads: &mut GradientSet,
        scratch: &mut BackwardScratch,
    ) {
        let BackwardScratch { d_act, d_in } = scratch;
        // Gradient w.r.t. the (pre-dropout) activation of the current layer,
        // turned into the pre-activation gradient in place.
        d_act.reshape_for(out_grad.len(), 1);
        d_act.data_mut().copy_from_slice(out_grad);
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if k == self.bottleneck_index {
                if let Some(e) = embedding_grad {
                    d_act.add_assign(e);
                }
            }
            let act = layer.activation;
            for ((d, &z), &a) in d_act
                .data_mut()
                .iter_mut()
                .zip(cache.pre[k].data())
                .zip(cache.post[k].data())
            {
                *d *= act.derivative(z, a);
            }
            cache.inputs[k].matmul_tn_acc(d_act, &mut grads.weights[k]);
            let bias = &mut grads.biases[k];
            for row in d_act.data().chunks_exact(bias.len()) {
                for (g, s) in bias.iter_mut().zip(row) {
                    *g += s;
                }
            }
            if k == 0 {
                break;
            }
            d_act.matmul_nt_into(&layer.weights, d_in);
            if let Some(mask) = cache.dropout_mask(k - 1) {
                d_in.mul_assign(mask);
            }
            std::mem::swap(d_act, d_in);
        }
    }

    /// `l1·Σ|w| + l2·Σw²` over all weights (biases excluded).
    pub fn regularization_penalty(&self) -> f64 {
        let (mut abs, mut sq) = (0.0, 0.0);
        for l in &self.layers {
            for &w in l.weights.data() {
                abs += w.abs();
                sq += w * w;
            }
        }
        self.l1_coeff * abs + self.l2_coeff * sq
    }

    /// Binary encoding: magic, layer count, per-layer `(in, out, activation)`,
    /// dropout/L1/L2, then each layer's row-major weights followed by its
    /// biases. All numbers little-endian; floats as raw IEEE-754 bits.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.in_width() as u32).to_le_bytes());
            out.extend_from_slice(&(l.out_width() as u32).to_le_bytes());
            out.push(l.activation.code());
        }
        for v in [self.dropout_rate, self.l1_coeff, self.l2_coeff] {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        for v in self.parameters() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let n = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            let i = r.u32()? as usize;
            let o = r.u32()? as usize;
            let a = Activation::from_code(r.take(1)?[0])?;
            shapes.push((i, o, a));
        }
        let (dropout, l1, l2) = (r.f64()?, r.f64()?, r.f64()?);
        let mut layers = Vec::with_capacity(n);
        for (i, o, a) in shapes {
            let w = (0..i * o).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let b = (0..o).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(DenseLayer::new(Matrix::from_vec(i, o, w)?, b, a)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat("trailing bytes".into()));
        }
        Self::from_layers(layers)?
            .with_dropout(dropout)?
            .with_regularization(l1, l2)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::ModelFormat("unexpected end of data".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(u64::from_le_bytes(
            self.take(8)?.try_into().unwrap(),
        )))
    }
}
