//! Independent oracles: naive loops and dense Gaussian elimination, no use of
//! the library's factorizations or closed forms.
#![allow(dead_code)]

pub mod checks;

use layer_admm::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows());
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

pub fn naive_transpose(a: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.cols(), a.rows());
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            out.set(j, i, a.get(i, j));
        }
    }
    out
}

/// `A W + e b`.
pub fn naive_affine(a: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut out = naive_matmul(a, w);
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            out.set(i, j, out.get(i, j) + b.get(0, j));
        }
    }
    out
}

pub fn lin(terms: &[(f64, &Matrix)]) -> Matrix {
    let (r, c) = terms[0].1.shape();
    let mut out = Matrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            out.set(i, j, terms.iter().map(|(a, m)| a * m.get(i, j)).sum());
        }
    }
    out
}

pub fn sq(a: &Matrix) -> f64 {
    a.as_slice().iter().map(|v| v * v).sum()
}

pub fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &Matrix) -> f64 {
    sq(a).sqrt()
}

/// `(ρ/2)||V - T||² + ⟨M, V - T⟩`.
pub fn penalty(v: &Matrix, t: &Matrix, m: &Matrix, rho: f64) -> f64 {
    let r = lin(&[(1.0, v), (-1.0, t)]);
    0.5 * rho * sq(&r) + dot(m, &r)
}

/// Gaussian elimination with partial pivoting on a dense square system.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        assert!(a[col][col].abs() > 1e-300, "singular system");
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                for c in 0..b[r].len() {
                    b[r][c] -= f * b[col][c];
                }
            }
        }
    }
    let k = b[0].len();
    let mut x = vec![vec![0.0; k]; n];
    for r in (0..n).rev() {
        for c in 0..k {
            let mut s = b[r][c];
            for j in r + 1..n {
                s -= a[r][j] * x[j][c];
            }
            x[r][c] = s / a[r][r];
        }
    }
    x
}

/// Minimizes a convex quadratic `f(v)` over `v ∈ R^n` given only a gradient
/// callback: the Hessian is probed column by column, then `H v = -g(0)` is
/// solved by elimination.
pub fn minimize_quadratic(n: usize, grad: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let zero = vec![0.0; n];
    let g0 = grad(&zero);
    let mut h = vec![vec![0.0; n]; n];
    let mut e = vec![0.0; n];
    for k in 0..n {
        e[k] = 1.0;
        let gk = grad(&e);
        for r in 0..n {
            h[r][k] = gk[r] - g0[r];
        }
        e[k] = 0.0;
    }
    let rhs: Vec<Vec<f64>> = g0.iter().map(|g| vec![-g]).collect();
    gauss_solve(h, rhs).into_iter().map(|r| r[0]).collect()
}

/// Central differences of `f` at `x` along every coordinate.
pub fn central_diff(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            p[k] = x[k] + h;
            let up = f(&p);
            p[k] = x[k] - h;
            let down = f(&p);
            p[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_k |a_k - b_k| / max(|b_k|, floor)`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Scalar softmax cross-entropy, summed over rows.
pub fn naive_cross_entropy(x: &Matrix, o: &Matrix) -> f64 {
    let mut total = 0.0;
    for r in 0..x.rows() {
        let max = x.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.row(r).iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for j in 0..x.cols() {
            total -= o.get(r, j) * (x.get(r, j) - lse);
        }
    }
    total
}

pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (r, &l) in labels.iter().enumerate() {
        m.set(r, l, 1.0);
    }
    m
}

/// Elementwise projection straight from the constraint sets, for comparing
/// against the library.
pub fn reference_project(a: f64, b: f64, c: f64, lower: bool, upper: bool, l: f64, u: f64) -> (f64, f64, f64) {
    if lower {
        // x + y = l, x ≤ l: the line point nearest (a, b), clipped at x = l.
        let x = ((a - b + l) / 2.0).min(l);
        (x, l - x, 0.0)
    } else if upper {
        let x = ((a - c + u) / 2.0).max(u);
        (x, 0.0, u - x)
    } else {
        (a.max(l).min(u), 0.0, 0.0)
    }
}
