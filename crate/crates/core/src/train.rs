//! The training loop: seeded shuffling, mini-batches, the two forward
//! branches (original and protected-flipped), loss assembly and Adam.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{
    self, bce_loss, covariance_loss, invariance_loss, variance_loss, LambdaWeights, LossBreakdown,
    LossParts, VarianceConfig,
};
use crate::matrix::Matrix;
use crate::nn::{BackwardScratch, Dropout, ForwardCache, GradientSet, Mode, Network};
use crate::seed::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub lambdas: LambdaWeights,
    pub variance: VarianceConfig,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl TrainConfig {
    /// 200 epochs, batch 256, learning rate 1e-3, Adam(0.9, 0.999, 1e-8),
    /// γ = 1, ε = 1e-4.
    pub fn new(lambdas: LambdaWeights, seed: u64) -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            seed,
            lambdas,
            variance: VarianceConfig::default(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_epsilon > 0.0 && self.adam_epsilon.is_finite()) {
            return Err(Error::invalid("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: GradientSet,
    pub second: GradientSet,
    pub timestep: u64,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        Self {
            first: GradientSet::zeros_like(net),
            second: GradientSet::zeros_like(net),
            timestep: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    net: &mut Network,
    grads: &GradientSet,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if !grads.matches(net) || !state.first.matches(net) || !state.second.matches(net) {
        return Err(Error::shape(
            "gradient or optimizer state does not match the network",
        ));
    }
    state.timestep += 1;
    let t = state.timestep as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let lr = cfg.learning_rate;
    let eps = cfg.adam_epsilon;

    let params = net.parameter_slices_mut();
    let moments = state.first.slices_mut().zip(state.second.slices_mut());
    for ((p, g), (m, v)) in params.zip(grads.slices()).zip(moments) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Row indices for every mini-batch of one epoch.
///
/// The permutation comes from a stream keyed on `(seed, epoch)`. A trailing
/// partial batch is kept when it has at least two rows.
pub fn batch_iterator(
    n_rows: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > n_rows {
        return Err(Error::invalid(format!(
            "batch size {batch_size} invalid for {n_rows} rows"
        )));
    }
    let mut idx: Vec<usize> = (0..n_rows).collect();
    idx.shuffle(&mut seed::stream(seed, Purpose::Shuffle, &[epoch as u64]));
    Ok(idx
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean over the epoch's batches.
    pub epochs: Vec<LossBreakdown>,
}

/// One mini-batch: feature rows with their labels and group memberships.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [f64],
    pub protected: &'a [f64],
    pub protected_col: usize,
}

/// Loss value and parameter gradient of one batch.
#[derive(Debug, Clone)]
pub struct BatchStep {
    pub breakdown: LossBreakdown,
    pub grads: GradientSet,
}

/// Buffers reused across the batches of a training run.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    original: ForwardCache,
    flipped: ForwardCache,
    out_original: Vec<f64>,
    out_flipped: Vec<f64>,
    grads: Option<GradientSet>,
    scratch: BackwardScratch,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Gradient of the last [`batch_gradient_in`] call.
    pub fn grads(&self) -> Option<&GradientSet> {
        self.grads.as_ref()
    }
}

/// Forward both branches, evaluate every term, and back-propagate the
/// weighted total.
pub fn batch_gradient(
    net: &Network,
    batch: Batch<'_>,
    cfg: &TrainConfig,
    mode: Mode,
    dropout_seed: u64,
) -> Result<BatchStep> {
    let mut ws = Workspace::new();
    let breakdown = batch_gradient_in(&mut ws, net, batch, cfg, mode, dropout_seed)?;
    let grads = ws.grads.take().expect("gradient was just computed");
    Ok(BatchStep { breakdown, grads })
}

/// [`batch_gradient`] with reusable buffers; the gradient is left in
/// [`Workspace::grads`].
pub fn batch_gradient_in(
    ws: &mut Workspace,
    net: &Network,
    batch: Batch<'_>,
    cfg: &TrainConfig,
    mode: Mode,
    dropout_seed: u64,
) -> Result<LossBreakdown> {
    let Batch {
        features,
        labels,
        protected,
        protected_col,
    } = batch;
    let w = cfg.lambdas;
    net.forward_into(
        features,
        Dropout::for_mode(mode, dropout_seed),
        &mut ws.original,
    )?;
    let flipped_x = loss::flip_protected(features, protected_col)?;
    // Both branches see the same masks.
    net.forward_into(&flipped_x, Dropout::SameAs(&ws.original), &mut ws.flipped)?;

    let preds = ws.original.predictions();
    let embeddings = ws
        .original
        .activation(net.bottleneck_index())
        .expect("bottleneck is a hidden layer");
    let acc = bce_loss(preds, labels)?;
    let var = variance_loss(embeddings, &cfg.variance)?;
    let inv = invariance_loss(preds, ws.flipped.predictions())?;
    let cov = covariance_loss(preds, protected)?;

    let parts = LossParts {
        acc: acc.value,
        var: var.value,
        inv: inv.value,
        cov: cov.value,
        reg: net.regularization_penalty(),
    };
    let breakdown = loss::total_loss(&parts, &w);

    ws.out_original.clear();
    ws.out_original.extend(
        (0..labels.len())
            .map(|i| w.acc() * acc.grad[i] + w.inv() * inv.grad_preds[i] + w.cov() * cov.grad[i]),
    );
    let mut emb_grad = var.grad;
    emb_grad.map_inplace(|g| w.var() * g);

    let grads = ws.grads.get_or_insert_with(|| GradientSet::zeros_like(net));
    if w.inv() > 0.0 {
        ws.out_flipped.clear();
        ws.out_flipped
            .extend(inv.grad_flipped.iter().map(|g| w.inv() * g));
        net.backward_into(
            &[&ws.original, &ws.flipped],
            &[&ws.out_original, &ws.out_flipped],
            Some(&emb_grad),
            grads,
            &mut ws.scratch,
        )?;
    } else {
        net.backward_into(
            &[&ws.original],
            &[&ws.out_original],
            Some(&emb_grad),
            grads,
            &mut ws.scratch,
        )?;
    }
    Ok(breakdown)
}

/// Trains `net` on `data` and returns the trained network with its per-epoch
/// loss history. Identical inputs give a bit-identical result.
pub fn train(
    mut net: Network,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    if data.n_features() != net.input_width() {
        return Err(Error::invalid(format!(
            "dataset has {} features, network expects {}",
            data.n_features(),
            net.input_width()
        )));
    }
    if cfg.batch_size > data.len() {
        return Err(Error::invalid(format!(
            "batch size {} exceeds dataset size {}",
            cfg.batch_size,
            data.len()
        )));
    }

    let mut adam = AdamState::new(&net);
    let mut ws = Workspace::new();
    let (mut x, mut y, mut p) = (Matrix::default(), Vec::new(), Vec::new());
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let batches = batch_iterator(data.len(), cfg.batch_size, cfg.seed, epoch)?;
        let mut sum = LossBreakdown::default();
        for (b, idx) in batches.iter().enumerate() {
            data.features.select_rows_into(idx, &mut x);
            y.clear();
            y.extend(idx.iter().map(|&i| data.labels[i]));
            p.clear();
            p.extend(idx.iter().map(|&i| data.protected[i]));
            let dropout_seed = seed::derive(cfg.seed, Purpose::Dropout, &[epoch as u64, b as u64]);
            let batch = Batch {
                features: &x,
                labels: &y,
                protected: &p,
                protected_col: data.protected_col,
            };
            let l = batch_gradient_in(&mut ws, &net, batch, cfg, Mode::Train, dropout_seed)?;
            let grads = ws.grads().expect("gradient was just computed");
            if !grads.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite gradient at epoch {epoch}, batch {b}"
                )));
            }
            adam_step(&mut net, grads, &mut adam, cfg)?;
            sum.l_acc += l.l_acc;
            sum.l_var += l.l_var;
            sum.l_inv += l.l_inv;
            sum.l_cov += l.l_cov;
            sum.l_reg += l.l_reg;
            sum.l_total += l.l_total;
        }
        let k = batches.len() as f64;
        history.epochs.push(LossBreakdown {
            l_acc: sum.l_acc / k,
            l_var: sum.l_var / k,
            l_inv: sum.l_inv / k,
            l_cov: sum.l_cov / k,
            l_reg: sum.l_reg / k,
            l_total: sum.l_total / k,
        });
    }
    Ok((net, history))
}
