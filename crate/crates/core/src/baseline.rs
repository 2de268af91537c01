//! Backpropagation with plain SGD or Adam on the same network and loss.
//!
//! [`backprop`] differentiates the summed objective
//! `Σ_q CE_q + (λ/2) Σ_i ||(W_i, b_i)||²`. The trainers divide that gradient by
//! the batch size before stepping, so the learning rates act on the per-sample
//! mean.

use crate::activation::Cutoffs;
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::loss::softmax_cross_entropy;
use crate::matrix::{row_broadcast_add, Matrix};
use crate::network::{Layer, NetworkWeights};
use crate::training::{train_with, History, MinibatchOptimizer, Schedule};

pub use crate::network::forward;

/// Objective value and its gradient, one [`Layer`] of partials per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub objective: f64,
    pub layers: Vec<Layer>,
}

impl Gradient {
    pub fn scale(&mut self, alpha: f64) {
        for g in &mut self.layers {
            g.w.map_inplace(|v| v * alpha);
            g.b.map_inplace(|v| v * alpha);
        }
    }
}

/// Exact gradient of the summed cross-entropy plus `(λ/2)||θ||²`. The cutoff
/// derivative is `1[l < p < u]`: zero at both kinks.
pub fn backprop(weights: &NetworkWeights, batch: &Batch, cut: Cutoffs, lambda_reg: f64) -> Result<Gradient> {
    let n = weights.depth();
    let layers = weights.layers();
    if batch.inputs.cols() != layers[0].w.rows() {
        return Err(Error::ShapeMismatch {
            op: "backprop",
            left: batch.inputs.shape(),
            right: layers[0].w.shape(),
        });
    }
    // pre[i] = V_{i-1} W_i + e b_i, post[i] = V_i.
    let mut pre = Vec::with_capacity(n);
    let mut post: Vec<Matrix> = Vec::with_capacity(n);
    for (i, layer) in layers.iter().enumerate() {
        let input = if i == 0 { &batch.inputs } else { &post[i - 1] };
        let p = row_broadcast_add(&input.matmul(&layer.w)?, &layer.b)?;
        let v = if i + 1 < n { p.map(|x| cut.apply(x)) } else { p.clone() };
        pre.push(p);
        post.push(v);
    }
    let (ce, mut delta) = softmax_cross_entropy(&post[n - 1], &batch.targets)?;

    let mut grads = vec![None; n];
    for i in (0..n).rev() {
        let input = if i == 0 { &batch.inputs } else { &post[i - 1] };
        let mut gw = input.t_matmul(&delta)?;
        let mut gb = delta.column_sums();
        if lambda_reg != 0.0 {
            gw.add_scaled_inplace(lambda_reg, &layers[i].w)?;
            gb.add_scaled_inplace(lambda_reg, &layers[i].b)?;
        }
        if i > 0 {
            let back = delta.matmul_t(&layers[i].w)?;
            let (l, u) = (cut.lower(), cut.upper());
            delta = back.zip_map(&pre[i - 1], |d, p| if l < p && p < u { d } else { 0.0 })?;
        }
        grads[i] = Some(Layer { w: gw, b: gb });
    }
    Ok(Gradient {
        objective: ce + 0.5 * lambda_reg * weights.squared_norm(),
        layers: grads.into_iter().map(|g| g.expect("filled")).collect(),
    })
}

fn check_grads(weights: &NetworkWeights, grads: &[Layer]) -> Result<()> {
    if grads.len() != weights.depth()
        || weights
            .layers()
            .iter()
            .zip(grads)
            .any(|(w, g)| w.w.shape() != g.w.shape() || w.b.shape() != g.b.shape())
    {
        return Err(Error::InvalidConfig("gradient shapes do not mirror the weights".into()));
    }
    Ok(())
}

/// `θ ← θ - lr · g`.
pub fn sgd_step(weights: &mut NetworkWeights, grads: &[Layer], lr: f64) -> Result<()> {
    check_grads(weights, grads)?;
    for (layer, g) in weights.layers_mut().iter_mut().zip(grads) {
        layer.w.add_scaled_inplace(-lr, &g.w)?;
        layer.b.add_scaled_inplace(-lr, &g.b)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates mirroring the weight shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<Layer>,
    pub second: Vec<Layer>,
    pub t: u64,
}

impl AdamState {
    pub fn new(weights: &NetworkWeights, config: AdamConfig) -> Self {
        let zeros: Vec<Layer> = weights
            .layers()
            .iter()
            .map(|l| Layer {
                w: Matrix::zeros(l.w.rows(), l.w.cols()),
                b: Matrix::zeros(1, l.b.cols()),
            })
            .collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut AdamState, weights: &mut NetworkWeights, grads: &[Layer]) -> Result<()> {
    check_grads(weights, grads)?;
    if state.first.len() != grads.len() {
        return Err(Error::InvalidConfig("Adam state does not mirror the weights".into()));
    }
    state.t += 1;
    let c = state.config;
    let t = state.t as i32;
    let correct1 = 1.0 - c.beta1.powi(t);
    let correct2 = 1.0 - c.beta2.powi(t);
    let update = |theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
        for k in 0..theta.len() {
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
            let m_hat = m[k] / correct1;
            let v_hat = v[k] / correct2;
            theta[k] -= c.step * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    };
    for (((layer, g), m), v) in weights
        .layers_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        update(layer.w.as_mut_slice(), m.w.as_mut_slice(), v.w.as_mut_slice(), g.w.as_slice());
        update(layer.b.as_mut_slice(), m.b.as_mut_slice(), v.b.as_mut_slice(), g.b.as_slice());
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaselineKind {
    Sgd { lr: f64 },
    Adam(AdamConfig),
}

impl BaselineKind {
    /// SGD with learning rate 0.3.
    pub fn sgd_default() -> Self {
        BaselineKind::Sgd { lr: 0.3 }
    }
}

/// Mean-gradient SGD or Adam as a [`MinibatchOptimizer`].
#[derive(Clone, Debug)]
pub struct BaselineTrainer {
    kind: BaselineKind,
    cut: Cutoffs,
    lambda_reg: f64,
    adam: Option<AdamState>,
}

impl BaselineTrainer {
    pub fn new(kind: BaselineKind, cut: Cutoffs, lambda_reg: f64) -> Self {
        Self {
            kind,
            cut,
            lambda_reg,
            adam: None,
        }
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }
}

impl MinibatchOptimizer for BaselineTrainer {
    fn name(&self) -> &str {
        match self.kind {
            BaselineKind::Sgd { .. } => "sgd",
            BaselineKind::Adam(_) => "adam",
        }
    }

    fn cutoffs(&self) -> Cutoffs {
        self.cut
    }

    fn step(&mut self, mut weights: NetworkWeights, batch: &Batch, _: usize) -> Result<NetworkWeights> {
        let mut grad = backprop(&weights, batch, self.cut, self.lambda_reg)?;
        grad.scale(1.0 / batch.len().max(1) as f64);
        match self.kind {
            BaselineKind::Sgd { lr } => sgd_step(&mut weights, &grad.layers, lr)?,
            BaselineKind::Adam(config) => {
                let state = self.adam.get_or_insert_with(|| AdamState::new(&weights, config));
                adam_step(state, &mut weights, &grad.layers)?;
            }
        }
        Ok(weights)
    }
}

pub fn train_baseline(
    dataset: &Dataset,
    weights: NetworkWeights,
    kind: BaselineKind,
    cut: Cutoffs,
    lambda_reg: f64,
    schedule: &Schedule,
) -> Result<(NetworkWeights, History)> {
    let mut trainer = BaselineTrainer::new(kind, cut, lambda_reg);
    train_with(dataset, weights, &mut trainer, schedule, |_| false)
}
