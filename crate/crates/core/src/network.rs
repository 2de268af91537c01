//! Layer weights of a fully connected network and the plain forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::Cutoffs;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::loss::{count_correct, softmax_cross_entropy};
use crate::matrix::{row_broadcast_add, Matrix};

/// One affine layer: `W` is `n_in x n_out`, `b` is `1 x n_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Matrix,
    pub b: Matrix,
}

/// Weights of all `N` layers, bottom first.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    layers: Vec<Layer>,
}

impl NetworkWeights {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.b.rows() != 1 || layer.b.cols() != layer.w.cols() {
                return Err(Error::ShapeMismatch {
                    op: "layer bias",
                    left: layer.w.shape(),
                    right: layer.b.shape(),
                });
            }
            if let Some(next) = layers.get(i + 1) {
                if next.w.rows() != layer.w.cols() {
                    return Err(Error::ShapeMismatch {
                        op: "layer chain",
                        left: layer.w.shape(),
                        right: next.w.shape(),
                    });
                }
            }
        }
        Ok(Self { layers })
    }

    /// All-zero weights for the size chain `n_0, .., n_N`.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Self::new(
            sizes
                .windows(2)
                .map(|w| Layer {
                    w: Matrix::zeros(w[0], w[1]),
                    b: Matrix::zeros(1, w[1]),
                })
                .collect(),
        )
    }

    /// Uniform fan-based initialization in `±sqrt(6 / (n_in + n_out))`, zero
    /// biases, drawn from a ChaCha8 stream seeded with `seed`.
    pub fn init_uniform(sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let data = (0..w[0] * w[1])
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer {
                    w: Matrix::from_vec(w[0], w[1], data).expect("sized"),
                    b: Matrix::zeros(1, w[1]),
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `n_0, .., n_N`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.rows()];
        s.extend(self.layers.iter().map(|l| l.w.cols()));
        s
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.w.as_slice().iter().chain(l.b.as_slice()))
            .map(|v| v * v)
            .sum()
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "layer sizes must list at least input and output widths, all positive; got {sizes:?}"
        )));
    }
    Ok(())
}

/// Layer outputs `V_1, .., V_N`: `V_i = dcutlu(V_{i-1} W_i + e b_i)` for hidden
/// layers, `V_N` affine.
pub fn forward(weights: &NetworkWeights, d: &Matrix, cut: Cutoffs) -> Result<Vec<Matrix>> {
    let n = weights.depth();
    let mut outs: Vec<Matrix> = Vec::with_capacity(n);
    for (i, layer) in weights.layers().iter().enumerate() {
        let input = if i == 0 { d } else { &outs[i - 1] };
        let mut p = row_broadcast_add(&input.matmul(&layer.w)?, &layer.b)?;
        if i + 1 < n {
            p.map_inplace(|v| cut.apply(v));
        }
        outs.push(p);
    }
    Ok(outs)
}

/// Top-layer logits only, computed in row chunks to bound memory.
pub fn predict(weights: &NetworkWeights, d: &Matrix, cut: Cutoffs) -> Result<Matrix> {
    const CHUNK: usize = 4096;
    if d.rows() <= CHUNK {
        return Ok(forward(weights, d, cut)?.pop().expect("non-empty network"));
    }
    let mut parts = Vec::new();
    let mut start = 0;
    while start < d.rows() {
        let end = (start + CHUNK).min(d.rows());
        parts.push(forward(weights, &d.row_range(start, end), cut)?.pop().expect("non-empty"));
        start = end;
    }
    let mut out = parts.remove(0);
    for p in parts {
        out = Matrix::vstack(&out, &p)?;
    }
    Ok(out)
}

/// Summed cross-entropy and correct-prediction count over a set of batches.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub cross_entropy_sum: f64,
    pub correct: usize,
    pub samples: usize,
}

impl Evaluation {
    pub fn mean_cross_entropy(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.cross_entropy_sum / self.samples as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.correct as f64 / self.samples as f64
        }
    }
}

pub fn evaluate<'a>(
    weights: &NetworkWeights,
    batches: impl IntoIterator<Item = &'a Batch>,
    cut: Cutoffs,
) -> Result<Evaluation> {
    let mut acc = Evaluation::default();
    for batch in batches {
        let logits = predict(weights, &batch.inputs, cut)?;
        let (ce, _) = softmax_cross_entropy(&logits, &batch.targets)?;
        acc.cross_entropy_sum += ce;
        acc.correct += count_correct(&logits, &batch.targets);
        acc.samples += batch.len();
    }
    Ok(acc)
}
