use std::collections::HashMap;

use crate::activation::Cutoffs;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::loss::softmax_cross_entropy;
use crate::matrix::{frob_norm, row_broadcast_add, Matrix};
use crate::network::{forward, Layer, NetworkWeights};
use crate::training::MinibatchOptimizer;

use super::subproblems::{outer_dual_update, solve_wb, solve_xn, update_xyz_layer, XyzBlock};
use super::{forward_init, HyperParams};

/// Computed with the committed weights after a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    /// Mean per-sample batch cross-entropy before the step.
    pub cross_entropy_before: f64,
    /// Mean per-sample batch cross-entropy after the step.
    pub cross_entropy_after: f64,
    /// `||X_i - S_{i-1} W_i - e b_i||_F` per layer, with the slacks left by the
    /// sweep and `S_0 = D`.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub weights: NetworkWeights,
    /// `Λ_1..Λ_N` at the end of the sweep.
    pub duals: Vec<Matrix>,
    pub diagnostics: Option<StepDiagnostics>,
}

/// One ADMM outer iteration per minibatch. With persistent multipliers the
/// trainer keeps each minibatch's `Λ` keyed by its position in the epoch.
#[derive(Clone, Debug)]
pub struct AdmmTrainer {
    hyper: HyperParams,
    diagnostics: bool,
    stored_duals: HashMap<usize, Vec<Matrix>>,
    last_diagnostics: Option<StepDiagnostics>,
}

impl AdmmTrainer {
    pub fn new(hyper: HyperParams) -> Self {
        Self {
            hyper,
            diagnostics: false,
            stored_duals: HashMap::new(),
            last_diagnostics: None,
        }
    }

    /// Also compute [`StepDiagnostics`] in [`MinibatchOptimizer::step`]; costs
    /// one extra forward pass per minibatch.
    pub fn with_diagnostics(mut self, on: bool) -> Self {
        self.diagnostics = on;
        self
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    /// Diagnostics of the latest [`MinibatchOptimizer::step`], if enabled.
    pub fn last_diagnostics(&self) -> Option<&StepDiagnostics> {
        self.last_diagnostics.as_ref()
    }

    /// Forward initialization, backward sweep `i = N..1`, then commit.
    ///
    /// `initial_duals` replaces the zero start of `Λ_1..Λ_N`.
    pub fn sweep(
        &self,
        weights: &NetworkWeights,
        batch: &Batch,
        initial_duals: Option<&[Matrix]>,
        diagnostics: bool,
    ) -> Result<StepOutput> {
        let hyper = &self.hyper;
        let n = weights.depth();
        let mut state = forward_init(weights, batch, hyper)?;
        if let Some(duals) = initial_duals {
            if duals.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "{} stored multipliers for {n} layers",
                    duals.len()
                )));
            }
            for (layer, dual) in state.hidden.iter_mut().zip(duals) {
                layer.lambda = dual.clone();
            }
            state.top.lambda = duals[n - 1].clone();
        }
        let cut = hyper.cutoffs();
        let with_upper = cut.has_upper();
        let old = weights.layers();

        let affine_top = state.top.x.clone();
        let x_top = solve_xn(&state.top.x, &affine_top, &state.top.lambda, hyper, &batch.targets)?;
        let lambda_top = outer_dual_update(&x_top, &affine_top, hyper.rho(n - 1))?;
        let mut new_layers = vec![None; n];
        new_layers[n - 1] = Some(solve_wb(
            &state.inputs[n - 1],
            &x_top,
            &lambda_top,
            hyper.rho(n - 1),
            hyper.lambda_reg(),
        )?);

        // X_i^new per layer and S_i^new = X_i + Y_i + Z_i per hidden layer.
        let mut x_new = vec![Matrix::zeros(0, 0); n];
        let mut slack_sums = vec![Matrix::zeros(0, 0); n - 1];
        let mut duals = vec![Matrix::zeros(0, 0); n];
        x_new[n - 1] = x_top;
        duals[n - 1] = lambda_top;
        for i in (0..n - 1).rev() {
            let layer = &state.hidden[i];
            // The forward pass sets X_i to S_{i-1} W_i + e b_i with the old weights.
            let affine = &layer.slack.x;
            let block = XyzBlock {
                affine,
                lambda: &layer.lambda,
                rho: hyper.rho(i),
                beta: hyper.beta(i),
                next_x: &x_new[i + 1],
                next_lambda: &duals[i + 1],
                next_weight: &old[i + 1].w,
                next_bias: &old[i + 1].b,
                next_rho: hyper.rho(i + 1),
                aux: &layer.aux,
                gammas: &layer.gammas,
                with_upper,
            };
            let update = update_xyz_layer(&block, &layer.masks, cut)?;
            let lambda = outer_dual_update(&update.slack.x, affine, hyper.rho(i))?;
            new_layers[i] = Some(solve_wb(
                &state.inputs[i],
                &update.slack.x,
                &lambda,
                hyper.rho(i),
                hyper.lambda_reg(),
            )?);
            duals[i] = lambda;
            slack_sums[i] = update.slack.sum();
            x_new[i] = update.slack.x;
        }

        let new_weights = NetworkWeights::new(
            new_layers
                .into_iter()
                .map(|l| l.expect("every layer solved"))
                .collect(),
        )?;
        let diagnostics = if diagnostics {
            let m = batch.len().max(1) as f64;
            let (before, _) = softmax_cross_entropy(&affine_top, &batch.targets)?;
            let logits = forward(&new_weights, &batch.inputs, cut)?
                .pop()
                .expect("non-empty");
            let (after, _) = softmax_cross_entropy(&logits, &batch.targets)?;
            let mut residuals = Vec::with_capacity(n);
            for (i, layer) in new_weights.layers().iter().enumerate() {
                let input = if i == 0 { &batch.inputs } else { &slack_sums[i - 1] };
                residuals.push(residual(input, &x_new[i], layer)?);
            }
            Some(StepDiagnostics {
                cross_entropy_before: before / m,
                cross_entropy_after: after / m,
                residuals,
            })
        } else {
            None
        };
        Ok(StepOutput {
            weights: new_weights,
            duals,
            diagnostics,
        })
    }
}

fn residual(input: &Matrix, x: &Matrix, layer: &Layer) -> Result<f64> {
    let pred = row_broadcast_add(&input.matmul(&layer.w)?, &layer.b)?;
    Ok(frob_norm(&x.sub(&pred)?))
}

impl MinibatchOptimizer for AdmmTrainer {
    fn name(&self) -> &str {
        "admm"
    }

    fn cutoffs(&self) -> Cutoffs {
        self.hyper.cutoffs()
    }

    fn step(&mut self, weights: NetworkWeights, batch: &Batch, batch_index: usize) -> Result<NetworkWeights> {
        let persist = self.hyper.persist_duals();
        let stored = if persist {
            self.stored_duals.get(&batch_index).map(Vec::as_slice)
        } else {
            None
        };
        let out = self.sweep(&weights, batch, stored, self.diagnostics)?;
        if persist {
            self.stored_duals.insert(batch_index, out.duals);
        }
        self.last_diagnostics = out.diagnostics;
        Ok(out.weights)
    }
}
