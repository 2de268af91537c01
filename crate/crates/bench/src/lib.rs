//! Fixtures shared by the benchmarks.

use layer_admm::activation::SlackTriple;
use layer_admm::data::{partition, synthetic, Batch};
use layer_admm::{ActivationKind, Cutoffs, HyperParams, Matrix, NetworkWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("length matches")
}

/// `M^T M + n I`.
pub fn spd(n: usize, seed: u64) -> Matrix {
    let m = random(n, n, seed);
    m.t_matmul(&m).expect("square").add(&Matrix::identity(n).scale(n as f64)).expect("same shape")
}

/// Operands of one hidden-layer block update: `m` samples, `n` units in the
/// layer and `n_next` in the one above.
pub struct XyzFixture {
    pub affine: Matrix,
    pub lambda: Matrix,
    pub next_x: Matrix,
    pub next_lambda: Matrix,
    pub next_weight: Matrix,
    pub next_bias: Matrix,
    pub aux: SlackTriple,
    pub gammas: SlackTriple,
}

impl XyzFixture {
    pub fn new(m: usize, n: usize, n_next: usize) -> Self {
        let triple = |seed| SlackTriple {
            x: random(m, n, seed),
            y: random(m, n, seed + 1),
            z: random(m, n, seed + 2),
        };
        Self {
            affine: random(m, n, 1),
            lambda: random(m, n, 2),
            next_x: random(m, n_next, 3),
            next_lambda: random(m, n_next, 4),
            next_weight: random(n, n_next, 5).scale(0.1),
            next_bias: random(1, n_next, 6),
            aux: triple(10),
            gammas: triple(20),
        }
    }
}

/// A network with its first minibatch of MNIST-shaped synthetic data.
pub fn network_and_batch(layers: &[usize], batch_size: usize) -> (NetworkWeights, Batch) {
    let data = synthetic(batch_size, 1, layers[0], *layers.last().expect("non-empty"), 0.5, 3)
        .expect("valid synthetic shape");
    let batch = partition(&data.train, batch_size, 0, false).expect("one batch").remove(0);
    (NetworkWeights::init_uniform(layers, 0).expect("valid widths"), batch)
}

pub fn hyper(depth: usize, activation: ActivationKind) -> HyperParams {
    let cut = match activation {
        ActivationKind::Relu => Cutoffs::relu(),
        ActivationKind::Dcutlu => Cutoffs::new(0.0, 1.0).expect("ordered"),
    };
    HyperParams::new(vec![0.1; depth], vec![0.1; depth - 1], activation, cut, 0.1, 0.05).expect("valid")
}
