//! Closed-form minimizers and dual ascents used inside one backward sweep.

use crate::activation::{project_slack, CutoffMasks, Cutoffs, SlackTriple};
use crate::error::{Error, Result};
use crate::loss::softmax_cross_entropy;
use crate::matrix::{frob_inner, frob_norm, row_broadcast_add, Cholesky, Matrix};
use crate::network::Layer;

use super::HyperParams;

fn check(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// `(ρ/2)||R||² + ⟨Λ, R⟩` with `R = X_next - S W - e b`.
pub fn penalty_eval(
    prev_sum: &Matrix,
    x_next: &Matrix,
    w: &Matrix,
    b: &Matrix,
    lambda: &Matrix,
    rho: f64,
) -> Result<f64> {
    let residual = x_next.sub(&row_broadcast_add(&prev_sum.matmul(w)?, b)?)?;
    let norm = frob_norm(&residual);
    Ok(0.5 * rho * norm * norm + frob_inner(lambda, &residual)?)
}

/// The quadratic part of the inner augmented Lagrangian of hidden layer `i`,
/// as a function of `(X_i, Y_i, Z_i)`:
///
/// ```text
/// (ρ'/2)||X' - S W' - e b'||² + ⟨Λ', X' - S W' - e b'⟩      S = X + Y + Z
/// + (ρ/2)||X - A||² + ⟨Λ, X - A⟩                            A = S_{i-1} W_i + e b_i
/// + Σ_{V ∈ X,Y,Z} (β/2)||V - V^c||² + ⟨Γ^v, V - V^c⟩
/// ```
///
/// Primed quantities belong to layer `i + 1`: its new `X` and `Λ` but its
/// weights from before the sweep. Without an upper cutoff the `Z` terms are
/// dropped and `Z` stays zero.
#[derive(Clone, Copy, Debug)]
pub struct XyzBlock<'a> {
    pub affine: &'a Matrix,
    pub lambda: &'a Matrix,
    pub rho: f64,
    pub beta: f64,
    pub next_x: &'a Matrix,
    pub next_lambda: &'a Matrix,
    pub next_weight: &'a Matrix,
    pub next_bias: &'a Matrix,
    pub next_rho: f64,
    pub aux: &'a SlackTriple,
    pub gammas: &'a SlackTriple,
    pub with_upper: bool,
}

impl XyzBlock<'_> {
    fn check_shapes(&self) -> Result<()> {
        let shape = self.affine.shape();
        for (op, m) in [
            ("xyz lambda", self.lambda),
            ("xyz aux x", &self.aux.x),
            ("xyz aux y", &self.aux.y),
            ("xyz aux z", &self.aux.z),
            ("xyz gamma x", &self.gammas.x),
            ("xyz gamma y", &self.gammas.y),
            ("xyz gamma z", &self.gammas.z),
        ] {
            if m.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op,
                    left: shape,
                    right: m.shape(),
                });
            }
        }
        let next_shape = (shape.0, self.next_weight.cols());
        if self.next_weight.rows() != shape.1
            || self.next_x.shape() != next_shape
            || self.next_lambda.shape() != next_shape
            || self.next_bias.shape() != (1, next_shape.1)
        {
            return Err(Error::ShapeMismatch {
                op: "xyz coupling",
                left: self.next_weight.shape(),
                right: self.next_x.shape(),
            });
        }
        Ok(())
    }
}

/// Exact minimizer of [`XyzBlock`]'s quadratic.
///
/// Stationarity gives `X = (C_x - Q)/(ρ+β)`, `Y = (C_y - Q)/β`,
/// `Z = (C_z - Q)/β` with a shared coupling term `Q` that is affine in
/// `S = X + Y + Z`. Summing the three yields one linear system
/// `S (I + κ ρ' W' W'ᵀ) = RHS`, `κ = 1/(ρ+β) + k/β` where `k` counts the
/// `Y`/`Z` blocks. It is solved directly when `W'` is wide and through the
/// Woodbury identity when it is narrow.
pub fn solve_xyz_block(block: &XyzBlock<'_>) -> Result<SlackTriple> {
    block.check_shapes()?;
    let (rho, beta, rho_next) = (block.rho, block.beta, block.next_rho);
    let w_next = block.next_weight;
    let (m, width) = block.affine.shape();
    let blocks = if block.with_upper { 2.0 } else { 1.0 };
    let kappa = 1.0 / (rho + beta) + blocks / beta;

    let cx = combine4(
        (rho, block.affine),
        (-1.0, block.lambda),
        (beta, &block.aux.x),
        (-1.0, &block.gammas.x),
    );
    let cy = block.aux.y.zip_map(&block.gammas.y, |c, g| beta * c - g)?;
    let cz = if block.with_upper {
        Some(block.aux.z.zip_map(&block.gammas.z, |c, g| beta * c - g)?)
    } else {
        None
    };

    // Q = ρ' S W'W'ᵀ + Q0, with Q0 = (ρ'(e b' - X') - Λ') W'ᵀ.
    let mut coupling = block.next_x.scale(-rho_next);
    for r in 0..m {
        for (v, &b) in coupling.row_mut(r).iter_mut().zip(block.next_bias.as_slice()) {
            *v += rho_next * b;
        }
    }
    coupling.add_scaled_inplace(-1.0, block.next_lambda)?;
    let q0 = coupling.matmul_t(w_next)?;

    let mut rhs = cx.scale(1.0 / (rho + beta));
    rhs.add_scaled_inplace(1.0 / beta, &cy)?;
    if let Some(cz) = &cz {
        rhs.add_scaled_inplace(1.0 / beta, cz)?;
    }
    rhs.add_scaled_inplace(-kappa, &q0)?;

    let coeff = kappa * rho_next;
    let mut q;
    if w_next.cols() >= width {
        let gram = w_next.matmul_t(w_next)?;
        let mut system = gram.scale(coeff);
        for i in 0..width {
            system.set(i, i, system.get(i, i) + 1.0);
        }
        let s = Cholesky::factor(&system)?.solve_right(&rhs)?;
        q = s.matmul(&gram)?.scale(rho_next);
    } else {
        // (I + c W Wᵀ)⁻¹ = I - W (I/c + WᵀW)⁻¹ Wᵀ
        let narrow = w_next.cols();
        let mut inner = w_next.t_matmul(w_next)?;
        for i in 0..narrow {
            inner.set(i, i, inner.get(i, i) + 1.0 / coeff);
        }
        let rhs_w = rhs.matmul(w_next)?;
        let correction = Cholesky::factor(&inner)?.solve_right(&rhs_w)?.matmul_t(w_next)?;
        let s = rhs.sub(&correction)?;
        q = s.matmul(w_next)?.matmul_t(w_next)?.scale(rho_next);
    }
    q.add_scaled_inplace(1.0, &q0)?;

    let x = cx.zip_map(&q, |c, q| (c - q) / (rho + beta))?;
    let y = cy.zip_map(&q, |c, q| (c - q) / beta)?;
    let z = match cz {
        Some(cz) => cz.zip_map(&q, |c, q| (c - q) / beta)?,
        None => Matrix::zeros(m, width),
    };
    Ok(SlackTriple { x, y, z })
}

fn combine4(a: (f64, &Matrix), b: (f64, &Matrix), c: (f64, &Matrix), d: (f64, &Matrix)) -> Matrix {
    let mut out = a.1.scale(a.0);
    for (i, o) in out.as_mut_slice().iter_mut().enumerate() {
        *o += b.0 * b.1.as_slice()[i] + c.0 * c.1.as_slice()[i] + d.0 * d.1.as_slice()[i];
    }
    out
}

/// `Γ = β (V_new - V^c)` for each of `X`, `Y`, `Z`.
pub fn inner_dual_update(new: &SlackTriple, aux: &SlackTriple, beta: f64) -> Result<SlackTriple> {
    Ok(SlackTriple {
        x: new.x.zip_map(&aux.x, |a, c| beta * (a - c))?,
        y: new.y.zip_map(&aux.y, |a, c| beta * (a - c))?,
        z: new.z.zip_map(&aux.z, |a, c| beta * (a - c))?,
    })
}

/// Result of one pass of the inner splitting on a hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct XyzUpdate {
    /// The new slacks, equal to the new auxiliary copies.
    pub slack: SlackTriple,
    pub gammas: SlackTriple,
}

/// One pass of the inner splitting: block minimization, dual ascent on `Γ`,
/// then projection of `V + Γ^v/β` onto the mask-selected constraint set. The
/// projected point becomes both the auxiliary copy and the layer's slacks.
pub fn update_xyz_layer(block: &XyzBlock<'_>, masks: &CutoffMasks, cut: Cutoffs) -> Result<XyzUpdate> {
    let new = solve_xyz_block(block)?;
    let gammas = inner_dual_update(&new, block.aux, block.beta)?;
    let inv = 1.0 / block.beta;
    let targets = SlackTriple {
        x: new.x.zip_map(&gammas.x, |v, g| v + inv * g)?,
        y: new.y.zip_map(&gammas.y, |v, g| v + inv * g)?,
        z: new.z.zip_map(&gammas.z, |v, g| v + inv * g)?,
    };
    let slack = project_slack(&targets, masks, cut)?;
    Ok(XyzUpdate { slack, gammas })
}

/// `Λ_new = ρ (X_new - A)` where `A = S_{i-1} W_i + e b_i` uses the weights
/// from before the sweep.
pub fn outer_dual_update(x_new: &Matrix, affine: &Matrix, rho: f64) -> Result<Matrix> {
    x_new.zip_map(affine, |x, a| rho * (x - a))
}

/// Ridge solve for `(W_i, b_i)`:
/// `argmin (λ/2)(||W||² + ||b||²) + (ρ/2)||X - S W - e b||² + ⟨Λ, X - S W - e b⟩`,
/// i.e. `(ρ SaᵀSa + λI) θ = Saᵀ(ρ X + Λ)` with `Sa = [S | e]`.
pub fn solve_wb(prev_sum: &Matrix, x_new: &Matrix, lambda: &Matrix, rho: f64, lambda_reg: f64) -> Result<Layer> {
    check("solve_wb", x_new, lambda)?;
    if prev_sum.rows() != x_new.rows() {
        return Err(Error::ShapeMismatch {
            op: "solve_wb",
            left: prev_sum.shape(),
            right: x_new.shape(),
        });
    }
    let n_in = prev_sum.cols();
    let augmented = prev_sum.append_ones_column();
    let mut system = augmented.t_matmul(&augmented)?.scale(rho);
    for i in 0..=n_in {
        system.set(i, i, system.get(i, i) + lambda_reg);
    }
    let target = x_new.zip_map(lambda, |x, l| rho * x + l)?;
    let rhs = augmented.t_matmul(&target)?;
    let theta = Cholesky::factor(&system)?.solve(&rhs)?;
    Ok(Layer {
        w: theta.row_range(0, n_in),
        b: theta.row_range(n_in, n_in + 1),
    })
}

/// Minimizer over `X` of `⟨G, X - X̂⟩ + (c/2)||X - X̂||² + (ρ/2)||X - A||² + ⟨Λ, X - A⟩`:
/// `X = (c X̂ - G + ρ A - Λ) / (c + ρ)`.
pub fn solve_top(
    x_hat: &Matrix,
    affine: &Matrix,
    lambda: &Matrix,
    grad: &Matrix,
    curvature: f64,
    rho: f64,
) -> Result<Matrix> {
    check("solve_top", x_hat, affine)?;
    check("solve_top", x_hat, lambda)?;
    check("solve_top", x_hat, grad)?;
    let denom = curvature + rho;
    Ok(combine4(
        (curvature / denom, x_hat),
        (-1.0 / denom, grad),
        (rho / denom, affine),
        (-1.0 / denom, lambda),
    ))
}

/// Top-layer update with the cross-entropy linearized at `X̂_N`.
pub fn solve_xn(
    x_hat: &Matrix,
    affine: &Matrix,
    lambda: &Matrix,
    hyper: &HyperParams,
    targets: &Matrix,
) -> Result<Matrix> {
    let (_, grad) = softmax_cross_entropy(x_hat, targets)?;
    let rho = hyper.rho(hyper.depth() - 1);
    solve_top(x_hat, affine, lambda, &grad, hyper.curvature(), rho)
}
