//! Training ReLU/DCutLU feedforward networks without backpropagation.
//!
//! The activations are rewritten as slack variables with equality and
//! indicator constraints, and the resulting problem is solved with a
//! layerwise two-level ADMM ([`admm`]). Plain backpropagation with SGD or
//! Adam ([`baseline`]) serves as the reference. [`experiment`] drives the
//! MNIST comparison, the learning-rate sweep and the timing table.

pub mod activation;
pub mod admm;
pub mod baseline;
pub mod data;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod matrix;
pub mod network;
pub mod training;

pub use activation::{ActivationKind, CutoffMasks, Cutoffs, SlackTriple};
pub use admm::{AdmmTrainer, HyperParams, SurrogateForm};
pub use baseline::{AdamConfig, BaselineKind, BaselineTrainer};
pub use data::{Batch, Dataset};
pub use error::{Error, Result};
pub use experiment::{OptimizerKind, RunConfig, SweepConfig};
pub use matrix::Matrix;
pub use network::{Layer, NetworkWeights};
pub use training::{EpochRecord, History, MinibatchOptimizer, Schedule};
