//! Per-instance checks on the closed-form subproblem solvers against explicit
//! objectives written with naive loops. Each returns a description of the
//! first violated bound.

use layer_admm::activation::{ActivationKind, Cutoffs, SlackTriple};
use layer_admm::admm::{solve_wb, solve_xn, solve_xyz_block, HyperParams, XyzBlock};
use layer_admm::baseline::backprop;
use layer_admm::data::Batch;
use layer_admm::network::{Layer, NetworkWeights};
use layer_admm::Matrix;
use rand::Rng;

use super::*;

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-5;
pub const STATIONARITY_TOL: f64 = 1e-7;

fn flatten(ms: &[&Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

fn unflatten(v: &[f64], shapes: &[(usize, usize)]) -> Vec<Matrix> {
    let mut at = 0;
    shapes
        .iter()
        .map(|&(r, c)| {
            let m = Matrix::from_vec(r, c, v[at..at + r * c].to_vec()).unwrap();
            at += r * c;
            m
        })
        .collect()
}

fn check_fd(name: &str, x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> Result<(), String> {
    let fd = central_diff(x, FD_STEP, f);
    let err = max_rel_err(&fd, analytic, 1e-2);
    if err > FD_REL_TOL {
        return Err(format!("{name}: analytic gradient disagrees with central differences, rel err {err:e}"));
    }
    Ok(())
}

fn check_stationary(name: &str, grad: &[f64], point: &[f64]) -> Result<(), String> {
    let g = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    let p = point.iter().map(|v| v * v).sum::<f64>().sqrt();
    if g > STATIONARITY_TOL * (1.0 + p) {
        return Err(format!("{name}: gradient norm {g:e} at a point of norm {p:e}"));
    }
    Ok(())
}

fn check_decrease(name: &str, before: f64, after: f64) -> Result<(), String> {
    if after > before + 1e-12 * (1.0 + before.abs()) {
        return Err(format!("{name}: objective rose from {before} to {after}"));
    }
    Ok(())
}

pub struct XyzInstance {
    pub affine: Matrix,
    pub lambda: Matrix,
    pub rho: f64,
    pub beta: f64,
    pub next_x: Matrix,
    pub next_lambda: Matrix,
    pub next_weight: Matrix,
    pub next_bias: Matrix,
    pub next_rho: f64,
    pub aux: SlackTriple,
    pub gammas: SlackTriple,
    pub with_upper: bool,
}

impl XyzInstance {
    pub fn random(m: usize, n: usize, n_next: usize, with_upper: bool, rng: &mut impl Rng) -> Self {
        let mut aux = SlackTriple {
            x: random(m, n, rng),
            y: random(m, n, rng),
            z: random(m, n, rng),
        };
        let mut gammas = SlackTriple {
            x: random(m, n, rng).scale(0.3),
            y: random(m, n, rng).scale(0.3),
            z: random(m, n, rng).scale(0.3),
        };
        if !with_upper {
            aux.z = Matrix::zeros(m, n);
            gammas.z = Matrix::zeros(m, n);
        }
        Self {
            affine: random(m, n, rng),
            lambda: random(m, n, rng).scale(0.5),
            rho: rng.random_range(0.05..1.0),
            beta: rng.random_range(0.05..1.0),
            next_x: random(m, n_next, rng),
            next_lambda: random(m, n_next, rng).scale(0.5),
            next_weight: random(n, n_next, rng),
            next_bias: random(1, n_next, rng),
            next_rho: rng.random_range(0.05..1.0),
            aux,
            gammas,
            with_upper,
        }
    }

    pub fn block(&self) -> XyzBlock<'_> {
        XyzBlock {
            affine: &self.affine,
            lambda: &self.lambda,
            rho: self.rho,
            beta: self.beta,
            next_x: &self.next_x,
            next_lambda: &self.next_lambda,
            next_weight: &self.next_weight,
            next_bias: &self.next_bias,
            next_rho: self.next_rho,
            aux: &self.aux,
            gammas: &self.gammas,
            with_upper: self.with_upper,
        }
    }

    fn blocks(&self) -> usize {
        if self.with_upper {
            3
        } else {
            2
        }
    }

    fn split(&self, v: &[f64]) -> (Matrix, Matrix, Matrix) {
        let shape = self.affine.shape();
        let mut parts = unflatten(v, &vec![shape; self.blocks()]).into_iter();
        let x = parts.next().unwrap();
        let y = parts.next().unwrap();
        let z = parts.next().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1));
        (x, y, z)
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        let (x, y, z) = self.split(v);
        let s = lin(&[(1.0, &x), (1.0, &y), (1.0, &z)]);
        let coupled = naive_affine(&s, &self.next_weight, &self.next_bias);
        let mut f = penalty(&self.next_x, &coupled, &self.next_lambda, self.next_rho)
            + penalty(&x, &self.affine, &self.lambda, self.rho)
            + penalty(&x, &self.aux.x, &self.gammas.x, self.beta)
            + penalty(&y, &self.aux.y, &self.gammas.y, self.beta);
        if self.with_upper {
            f += penalty(&z, &self.aux.z, &self.gammas.z, self.beta);
        }
        f
    }

    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let (x, y, z) = self.split(v);
        let s = lin(&[(1.0, &x), (1.0, &y), (1.0, &z)]);
        let r = lin(&[(1.0, &self.next_x), (-1.0, &naive_affine(&s, &self.next_weight, &self.next_bias))]);
        let back = naive_matmul(
            &lin(&[(self.next_rho, &r), (1.0, &self.next_lambda)]),
            &naive_transpose(&self.next_weight),
        );
        let (rho, beta) = (self.rho, self.beta);
        let gx = lin(&[
            (-1.0, &back),
            (rho, &x),
            (-rho, &self.affine),
            (1.0, &self.lambda),
            (beta, &x),
            (-beta, &self.aux.x),
            (1.0, &self.gammas.x),
        ]);
        let gy = lin(&[(-1.0, &back), (beta, &y), (-beta, &self.aux.y), (1.0, &self.gammas.y)]);
        let gz = lin(&[(-1.0, &back), (beta, &z), (-beta, &self.aux.z), (1.0, &self.gammas.z)]);
        if self.with_upper {
            flatten(&[&gx, &gy, &gz])
        } else {
            flatten(&[&gx, &gy])
        }
    }

    pub fn pack(&self, t: &SlackTriple) -> Vec<f64> {
        if self.with_upper {
            flatten(&[&t.x, &t.y, &t.z])
        } else {
            flatten(&[&t.x, &t.y])
        }
    }
}

/// Stationarity, objective decrease and a finite-difference check of the
/// analytic gradient on one random instance of the slack block.
pub fn check_xyz(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let (m, n, n_next) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..6));
    let inst = XyzInstance::random(m, n, n_next, rng.random_bool(0.5), &mut rng);
    let name = format!("xyz block seed {seed} ({m}x{n}, next {n_next}, upper {})", inst.with_upper);

    let probe: Vec<f64> = (0..inst.blocks() * m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    check_fd(&name, &probe, &inst.gradient(&probe), |v| inst.objective(v))?;

    let out = solve_xyz_block(&inst.block()).map_err(|e| format!("{name}: {e}"))?;
    if !inst.with_upper && out.z.max_abs() != 0.0 {
        return Err(format!("{name}: Z must stay zero without an upper cutoff"));
    }
    let point = inst.pack(&out);
    check_stationary(&name, &inst.gradient(&point), &point)?;
    check_decrease(&name, inst.objective(&inst.pack(&inst.aux)), inst.objective(&point))
}

pub struct WbInstance {
    pub prev_sum: Matrix,
    pub x: Matrix,
    pub lambda: Matrix,
    pub rho: f64,
    pub lambda_reg: f64,
}

impl WbInstance {
    pub fn random(m: usize, n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            prev_sum: random(m, n_in, rng),
            x: random(m, n_out, rng),
            lambda: random(m, n_out, rng).scale(0.5),
            rho: rng.random_range(0.05..1.0),
            lambda_reg: rng.random_range(0.01..1.0),
        }
    }

    fn shapes(&self) -> [(usize, usize); 2] {
        [(self.prev_sum.cols(), self.x.cols()), (1, self.x.cols())]
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        let p = unflatten(v, &self.shapes());
        0.5 * self.lambda_reg * (sq(&p[0]) + sq(&p[1]))
            + penalty(&self.x, &naive_affine(&self.prev_sum, &p[0], &p[1]), &self.lambda, self.rho)
    }

    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let p = unflatten(v, &self.shapes());
        let r = lin(&[(1.0, &self.x), (-1.0, &naive_affine(&self.prev_sum, &p[0], &p[1]))]);
        let t = lin(&[(self.rho, &r), (1.0, &self.lambda)]);
        let gw = lin(&[(self.lambda_reg, &p[0]), (-1.0, &naive_matmul(&naive_transpose(&self.prev_sum), &t))]);
        let ones = Matrix::filled(1, t.rows(), 1.0);
        let gb = lin(&[(self.lambda_reg, &p[1]), (-1.0, &naive_matmul(&ones, &t))]);
        flatten(&[&gw, &gb])
    }
}

pub fn check_wb(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let (m, n_in, n_out) = (rng.random_range(1..7), rng.random_range(1..6), rng.random_range(1..5));
    let inst = WbInstance::random(m, n_in, n_out, &mut rng);
    let name = format!("ridge seed {seed} ({m}x{n_in} -> {n_out})");

    let dim = (n_in + 1) * n_out;
    let probe: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    check_fd(&name, &probe, &inst.gradient(&probe), |v| inst.objective(v))?;

    let layer = solve_wb(&inst.prev_sum, &inst.x, &inst.lambda, inst.rho, inst.lambda_reg)
        .map_err(|e| format!("{name}: {e}"))?;
    let point = flatten(&[&layer.w, &layer.b]);
    check_stationary(&name, &inst.gradient(&point), &point)?;
    check_decrease(&name, inst.objective(&probe), inst.objective(&point))
}

pub struct TopInstance {
    pub x_hat: Matrix,
    pub affine: Matrix,
    pub lambda: Matrix,
    pub targets: Matrix,
    pub hyper: HyperParams,
}

impl TopInstance {
    pub fn random(m: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        let hyper = HyperParams::new(
            vec![rng.random_range(0.01..1.0)],
            vec![],
            ActivationKind::Relu,
            Cutoffs::relu(),
            0.1,
            rng.random_range(0.01..1.0),
        )
        .unwrap();
        Self {
            x_hat: random(m, classes, rng).scale(3.0),
            affine: random(m, classes, rng).scale(3.0),
            lambda: random(m, classes, rng).scale(0.5),
            targets: one_hot(&labels, classes),
            hyper,
        }
    }

    /// Softmax minus targets at `X̂`, computed row by row.
    fn linear_term(&self) -> Matrix {
        let mut g = Matrix::zeros(self.x_hat.rows(), self.x_hat.cols());
        for r in 0..g.rows() {
            let denom: f64 = self.x_hat.row(r).iter().map(|v| v.exp()).sum();
            for j in 0..g.cols() {
                g.set(r, j, self.x_hat.get(r, j).exp() / denom - self.targets.get(r, j));
            }
        }
        g
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        let x = Matrix::from_vec(self.x_hat.rows(), self.x_hat.cols(), v.to_vec()).unwrap();
        let d = lin(&[(1.0, &x), (-1.0, &self.x_hat)]);
        let c = self.hyper.surrogate_c();
        dot(&self.linear_term(), &d) + 0.5 * c * sq(&d) + penalty(&x, &self.affine, &self.lambda, self.hyper.rho(0))
    }

    pub fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let x = Matrix::from_vec(self.x_hat.rows(), self.x_hat.cols(), v.to_vec()).unwrap();
        let (c, rho) = (self.hyper.surrogate_c(), self.hyper.rho(0));
        lin(&[
            (1.0, &self.linear_term()),
            (c, &x),
            (-c, &self.x_hat),
            (rho, &x),
            (-rho, &self.affine),
            (1.0, &self.lambda),
        ])
        .into_vec()
    }
}

pub fn check_top(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let (m, classes) = (rng.random_range(1..6), rng.random_range(2..6));
    let inst = TopInstance::random(m, classes, &mut rng);
    let name = format!("top layer seed {seed} ({m}x{classes})");

    let probe: Vec<f64> = (0..m * classes).map(|_| rng.random_range(-2.0..2.0)).collect();
    check_fd(&name, &probe, &inst.gradient(&probe), |v| inst.objective(v))?;

    let x = solve_xn(&inst.x_hat, &inst.affine, &inst.lambda, &inst.hyper, &inst.targets)
        .map_err(|e| format!("{name}: {e}"))?;
    let point = x.into_vec();
    check_stationary(&name, &inst.gradient(&point), &point)?;
    check_decrease(&name, inst.objective(inst.x_hat.as_slice()), inst.objective(&point))
}

fn naive_objective(weights: &NetworkWeights, d: &Matrix, o: &Matrix, l: f64, u: f64, lambda_reg: f64) -> f64 {
    let n = weights.depth();
    let mut v = d.clone();
    for (i, layer) in weights.layers().iter().enumerate() {
        v = naive_affine(&v, &layer.w, &layer.b);
        if i + 1 < n {
            v = v.map(|p| p.max(l).min(u));
        }
    }
    let reg: f64 = weights.layers().iter().map(|layer| sq(&layer.w) + sq(&layer.b)).sum();
    naive_cross_entropy(&v, o) + 0.5 * lambda_reg * reg
}

fn min_kink_distance(weights: &NetworkWeights, d: &Matrix, l: f64, u: f64) -> f64 {
    let n = weights.depth();
    let mut v = d.clone();
    let mut dist = f64::INFINITY;
    for (i, layer) in weights.layers().iter().enumerate() {
        v = naive_affine(&v, &layer.w, &layer.b);
        if i + 1 < n {
            for &p in v.as_slice() {
                dist = dist.min((p - l).abs()).min((p - u).abs());
            }
            v = v.map(|p| p.max(l).min(u));
        }
    }
    dist
}

/// Backprop against central differences of a naive forward pass on a random
/// 3-4-2 network with 5 samples, resampled until every hidden pre-activation
/// is at least 1e-3 from a cutoff.
pub fn check_backprop(seed: u64, dcutlu: bool) -> Result<(), String> {
    let mut rng = rng(seed);
    let (l, u) = if dcutlu { (0.0, 1.0) } else { (0.0, f64::INFINITY) };
    let cut = Cutoffs::new(l, u).unwrap();
    let lambda_reg = rng.random_range(0.0..0.5);
    let (weights, d, o) = loop {
        let layers = vec![
            Layer { w: random(3, 4, &mut rng).scale(1.5), b: random(1, 4, &mut rng) },
            Layer { w: random(4, 2, &mut rng).scale(1.5), b: random(1, 2, &mut rng) },
        ];
        let w = NetworkWeights::new(layers).unwrap();
        let d = random(5, 3, &mut rng);
        if min_kink_distance(&w, &d, l, u) >= 1e-3 {
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..2)).collect();
            break (w, d, one_hot(&labels, 2));
        }
    };
    let batch = Batch::new(d.clone(), o.clone()).unwrap();
    let grad = backprop(&weights, &batch, cut, lambda_reg).map_err(|e| e.to_string())?;
    let analytic: Vec<f64> = grad.layers.iter().flat_map(|g| g.w.as_slice().iter().chain(g.b.as_slice())).copied().collect();
    let shapes: Vec<[(usize, usize); 2]> = weights.layers().iter().map(|l| [l.w.shape(), l.b.shape()]).collect();
    let theta: Vec<f64> = weights.layers().iter().flat_map(|l| l.w.as_slice().iter().chain(l.b.as_slice())).copied().collect();
    let rebuild = |v: &[f64]| {
        let mut at = 0;
        let layers = shapes
            .iter()
            .map(|s| {
                let parts = unflatten(&v[at..], s);
                at += s[0].0 * s[0].1 + s[1].1;
                Layer { w: parts[0].clone(), b: parts[1].clone() }
            })
            .collect();
        NetworkWeights::new(layers).unwrap()
    };
    let fd = central_diff(&theta, 1e-6, |v| naive_objective(&rebuild(v), &d, &o, l, u, lambda_reg));
    let err = max_rel_err(&analytic, &fd, 1e-3);
    if err > 1e-5 {
        return Err(format!("backprop seed {seed}: rel err {err:e} against central differences"));
    }
    let value = naive_objective(&weights, &d, &o, l, u, lambda_reg);
    if (grad.objective - value).abs() > 1e-10 * (1.0 + value.abs()) {
        return Err(format!("backprop seed {seed}: objective {} vs {value}", grad.objective));
    }
    Ok(())
}
