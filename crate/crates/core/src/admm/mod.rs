//! Layerwise ADMM training over the slack-variable reformulation of a
//! ReLU/DCutLU network.
//!
//! Each hidden layer `i < N` carries slacks `(X_i, Y_i, Z_i)` tied to the layer
//! below by the equality `X_i = (X_{i-1} + Y_{i-1} + Z_{i-1}) W_i + e b_i`, with
//! multiplier `Λ_i` and penalty `ρ_i`. The activation itself becomes an
//! indicator on the slacks, handled by an inner splitting with auxiliary copies
//! `(X^c, Y^c, Z^c)`, multipliers `(Γ^x, Γ^y, Γ^z)` and penalty `β_i`.
//!
//! One outer iteration on a minibatch ([`AdmmTrainer::sweep`]):
//!
//! 1. forward pass initializing every slack, mask and auxiliary variable
//!    ([`forward_init`]); all `Λ_i` start at zero;
//! 2. backward sweep `i = N, .., 1`: new slacks (closed-form surrogate step on
//!    top, [`update_xyz_layer`] below), dual ascent on `Λ_i`, ridge solve for
//!    `(W_i, b_i)`. Layer `i` couples to layer `i + 1` through its freshly
//!    updated `X_{i+1}` and `Λ_{i+1}` but the weights `(W_{i+1}, b_{i+1})` from
//!    before the sweep;
//! 3. all new weights are committed together.

mod subproblems;
mod trainer;

pub use subproblems::{
    inner_dual_update, outer_dual_update, penalty_eval, solve_top, solve_wb, solve_xn,
    solve_xyz_block, update_xyz_layer, XyzBlock, XyzUpdate,
};
pub use trainer::{AdmmTrainer, StepDiagnostics, StepOutput};

use crate::activation::{decompose, ActivationKind, CutoffMasks, Cutoffs, SlackTriple};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::matrix::{row_broadcast_add, Matrix};
use crate::network::NetworkWeights;

/// How the top-layer curvature constant `c` enters the cross-entropy surrogate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SurrogateForm {
    /// `(c/2) ||X - X̂||²`: `c` is the Hessian scale.
    #[default]
    Hessian,
    /// `c ||X - X̂||²`: curvature `2c`.
    Unhalved,
}

/// Penalties and model constants of one ADMM run.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    rho: Vec<f64>,
    beta: Vec<f64>,
    cutoffs: Cutoffs,
    activation: ActivationKind,
    lambda_reg: f64,
    surrogate_c: f64,
    surrogate_form: SurrogateForm,
    persist_duals: bool,
}

impl HyperParams {
    /// `rho` has one entry per layer (`ρ_1..ρ_N`), `beta` one per hidden layer
    /// (`β_1..β_{N-1}`). ReLU ignores `cutoffs` and uses `(0, +inf)`.
    pub fn new(
        rho: Vec<f64>,
        beta: Vec<f64>,
        activation: ActivationKind,
        cutoffs: Cutoffs,
        lambda_reg: f64,
        surrogate_c: f64,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        if rho.is_empty() {
            problems.push("rho needs one value per layer".to_string());
        }
        if beta.len() + 1 != rho.len() {
            problems.push(format!(
                "beta needs one value per hidden layer: {} rho values but {} beta values",
                rho.len(),
                beta.len()
            ));
        }
        if let Some(r) = rho.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            problems.push(format!("every rho must be positive and finite, got {r}"));
        }
        if let Some(b) = beta.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            problems.push(format!("every beta must be positive and finite, got {b}"));
        }
        if !(lambda_reg.is_finite() && lambda_reg >= 0.0) {
            problems.push(format!("lambda must be non-negative, got {lambda_reg}"));
        }
        if !(surrogate_c.is_finite() && surrogate_c > 0.0) {
            problems.push(format!("surrogate coefficient must be positive, got {surrogate_c}"));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidConfig(problems.join("; ")));
        }
        let cutoffs = match activation {
            ActivationKind::Relu => Cutoffs::relu(),
            ActivationKind::Dcutlu => cutoffs,
        };
        Ok(Self {
            rho,
            beta,
            cutoffs,
            activation,
            lambda_reg,
            surrogate_c,
            surrogate_form: SurrogateForm::Hessian,
            persist_duals: false,
        })
    }

    /// 784-500-600-10 MNIST setting: `ρ = (0.2, 0.1, 0.05)`, `β = (0.2, 0.1)`,
    /// `λ = 0.1`, `c = 0.05`, ReLU.
    pub fn mnist_default() -> Self {
        Self::new(
            vec![0.2, 0.1, 0.05],
            vec![0.2, 0.1],
            ActivationKind::Relu,
            Cutoffs::relu(),
            0.1,
            0.05,
        )
        .expect("valid constants")
    }

    /// Every `ρ_i` and `β_i` set to `rate`.
    pub fn uniform_rate(
        depth: usize,
        rate: f64,
        activation: ActivationKind,
        cutoffs: Cutoffs,
        lambda_reg: f64,
        surrogate_c: f64,
    ) -> Result<Self> {
        Self::new(
            vec![rate; depth],
            vec![rate; depth.saturating_sub(1)],
            activation,
            cutoffs,
            lambda_reg,
            surrogate_c,
        )
    }

    pub fn with_surrogate_form(mut self, form: SurrogateForm) -> Self {
        self.surrogate_form = form;
        self
    }

    /// Keep each minibatch's `Λ_i` across outer iterations instead of
    /// restarting them at zero.
    pub fn with_persist_duals(mut self, persist: bool) -> Self {
        self.persist_duals = persist;
        self
    }

    pub fn depth(&self) -> usize {
        self.rho.len()
    }

    /// `ρ_i` for zero-based layer index `i`.
    pub fn rho(&self, i: usize) -> f64 {
        self.rho[i]
    }

    /// `β_i` for zero-based hidden layer index `i`.
    pub fn beta(&self, i: usize) -> f64 {
        self.beta[i]
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rho
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn cutoffs(&self) -> Cutoffs {
        self.cutoffs
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn lambda_reg(&self) -> f64 {
        self.lambda_reg
    }

    pub fn surrogate_c(&self) -> f64 {
        self.surrogate_c
    }

    pub fn surrogate_form(&self) -> SurrogateForm {
        self.surrogate_form
    }

    pub fn persist_duals(&self) -> bool {
        self.persist_duals
    }

    /// Second derivative of the top-layer surrogate.
    pub fn curvature(&self) -> f64 {
        match self.surrogate_form {
            SurrogateForm::Hessian => self.surrogate_c,
            SurrogateForm::Unhalved => 2.0 * self.surrogate_c,
        }
    }
}

/// ADMM variables of a hidden layer `i < N`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayerState {
    pub slack: SlackTriple,
    pub aux: SlackTriple,
    pub gammas: SlackTriple,
    pub masks: CutoffMasks,
    pub lambda: Matrix,
}

/// The top layer has no activation, hence no `Y`, `Z` or inner splitting.
#[derive(Clone, Debug, PartialEq)]
pub struct TopLayerState {
    pub x: Matrix,
    pub lambda: Matrix,
}

/// Everything the forward pass initializes for one minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardState {
    /// `S_0 = D` and `S_i = X_i + Y_i + Z_i` for hidden layers: the input of
    /// layer `i + 1`.
    pub inputs: Vec<Matrix>,
    pub hidden: Vec<HiddenLayerState>,
    pub top: TopLayerState,
}

/// Feeds the batch through the network, decomposing every hidden
/// pre-activation into slacks and masks. Multipliers start at zero and the
/// auxiliary copies equal the slacks.
pub fn forward_init(weights: &NetworkWeights, batch: &Batch, hyper: &HyperParams) -> Result<ForwardState> {
    let n = weights.depth();
    if hyper.depth() != n {
        return Err(Error::InvalidConfig(format!(
            "hyper-parameters describe {} layers, network has {n}",
            hyper.depth()
        )));
    }
    let sizes = weights.sizes();
    if batch.inputs.cols() != sizes[0] || batch.targets.cols() != sizes[n] {
        return Err(Error::ShapeMismatch {
            op: "forward_init",
            left: (batch.inputs.cols(), batch.targets.cols()),
            right: (sizes[0], sizes[n]),
        });
    }
    let cut = hyper.cutoffs();
    let m = batch.len();
    let mut inputs = Vec::with_capacity(n);
    inputs.push(batch.inputs.clone());
    let mut hidden = Vec::with_capacity(n - 1);
    for layer in &weights.layers()[..n - 1] {
        let p = row_broadcast_add(&inputs.last().expect("seeded").matmul(&layer.w)?, &layer.b)?;
        let (slack, masks) = decompose(&p, cut);
        let width = p.cols();
        inputs.push(slack.sum());
        hidden.push(HiddenLayerState {
            aux: slack.clone(),
            slack,
            gammas: SlackTriple::zeros(m, width),
            masks,
            lambda: Matrix::zeros(m, width),
        });
    }
    let last = &weights.layers()[n - 1];
    let x = row_broadcast_add(&inputs[n - 1].matmul(&last.w)?, &last.b)?;
    let width = x.cols();
    Ok(ForwardState {
        inputs,
        hidden,
        top: TopLayerState {
            x,
            lambda: Matrix::zeros(m, width),
        },
    })
}
