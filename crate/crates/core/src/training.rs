//! The epoch loop shared by ADMM and the backprop baselines.

use std::time::Instant;

use crate::activation::Cutoffs;
use crate::data::{partition, Batch, Dataset};
use crate::error::Result;
use crate::network::{evaluate, NetworkWeights};

/// Anything that turns weights into new weights given one minibatch.
pub trait MinibatchOptimizer {
    fn name(&self) -> &str;

    /// Cutoffs used when evaluating the network.
    fn cutoffs(&self) -> Cutoffs;

    /// `batch_index` is the minibatch's position within the epoch.
    fn step(&mut self, weights: NetworkWeights, batch: &Batch, batch_index: usize) -> Result<NetworkWeights>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Reshuffle the partition every epoch, from `seed + epoch`.
    pub shuffle: bool,
    pub evaluate_test: bool,
    pub record_wallclock: bool,
}

impl Schedule {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            seed,
            shuffle: false,
            evaluate_test: true,
            record_wallclock: true,
        }
    }
}

/// Metrics after one epoch. Cross-entropies are per-sample means.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub train_ce: f64,
    pub train_acc: f64,
    pub test_ce: Option<f64>,
    pub test_acc: Option<f64>,
    pub secs_per_minibatch: Option<f64>,
}

impl EpochRecord {
    /// Train accuracy minus test accuracy.
    pub fn gap(&self) -> Option<f64> {
        self.test_acc.map(|t| self.train_acc - t)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Runs `schedule.epochs` epochs over the fixed partition of `dataset.train`,
/// evaluating after each. Stops early once `stop` returns true for a record.
pub fn train_with(
    dataset: &Dataset,
    weights: NetworkWeights,
    optimizer: &mut dyn MinibatchOptimizer,
    schedule: &Schedule,
    mut stop: impl FnMut(&EpochRecord) -> bool,
) -> Result<(NetworkWeights, History)> {
    let mut history = History::default();
    if schedule.epochs == 0 {
        return Ok((weights, history));
    }
    let mut batches = partition(&dataset.train, schedule.batch_size, schedule.seed, schedule.shuffle)?;
    let mut weights = weights;
    let cut = optimizer.cutoffs();
    for epoch in 1..=schedule.epochs {
        if schedule.shuffle && epoch > 1 {
            batches = partition(
                &dataset.train,
                schedule.batch_size,
                schedule.seed.wrapping_add(epoch as u64 - 1),
                true,
            )?;
        }
        let mut elapsed = 0.0;
        for (index, batch) in batches.iter().enumerate() {
            let start = Instant::now();
            weights = optimizer.step(weights, batch, index)?;
            elapsed += start.elapsed().as_secs_f64();
        }
        let train = evaluate(&weights, &batches, cut)?;
        let test = if schedule.evaluate_test {
            Some(evaluate(&weights, [&dataset.test], cut)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            train_ce: train.mean_cross_entropy(),
            train_acc: train.accuracy(),
            test_ce: test.map(|t| t.mean_cross_entropy()),
            test_acc: test.map(|t| t.accuracy()),
            secs_per_minibatch: schedule
                .record_wallclock
                .then(|| elapsed / batches.len() as f64),
        };
        let done = stop(&record);
        history.records.push(record);
        if done {
            break;
        }
    }
    Ok((weights, history))
}
