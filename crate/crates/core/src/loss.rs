use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Summed softmax cross-entropy of logits `x` against targets `o`, with the
/// gradient `softmax(X) - O`. Rows are shifted by their maximum before
/// exponentiation.
pub fn softmax_cross_entropy(x: &Matrix, o: &Matrix) -> Result<(f64, Matrix)> {
    if x.shape() != o.shape() {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: x.shape(),
            right: o.shape(),
        });
    }
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut value = 0.0;
    for r in 0..x.rows() {
        let (row, target) = (x.row(r), o.row(r));
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_norm = norm.ln();
        let g = grad.row_mut(r);
        for j in 0..row.len() {
            let shifted = row[j] - max;
            if target[j] != 0.0 {
                value -= target[j] * (shifted - log_norm);
            }
            g[j] = (shifted).exp() / norm - target[j];
        }
    }
    Ok((value, grad))
}

/// Row-wise softmax.
pub fn softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut norm = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            norm += *v;
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

/// Number of rows whose arg-max logit matches the arg-max target.
pub fn count_correct(logits: &Matrix, targets: &Matrix) -> usize {
    (0..logits.rows())
        .filter(|&r| argmax(logits.row(r)) == argmax(targets.row(r)))
        .count()
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}
