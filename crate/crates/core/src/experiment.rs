//! Run configuration and the three experiment drivers (optimizer comparison,
//! learning-rate sweep, per-minibatch timing) with their CSV writers.
//!
//! CSV schemas, header strings in column order:
//!
//! - history: `epoch,train_ce,train_acc,test_ce,test_acc,secs_per_minibatch`
//! - summary: `optimizer,epochs,final_train_acc,final_test_acc,final_gap`
//! - gap: `epoch,optimizer,gap` (train accuracy minus test accuracy)
//! - sweep: `rate,activation,epochs_to_threshold` (`>cap` when never reached)
//! - timing: `optimizer,activation,mean_secs,std_secs`
//!
//! Missing values are written as `NA`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::activation::{ActivationKind, Cutoffs};
use crate::admm::{AdmmTrainer, HyperParams, SurrogateForm};
use crate::baseline::{AdamConfig, BaselineKind, BaselineTrainer};
use crate::data::{partition, Dataset};
use crate::error::{Error, Result};
use crate::network::{evaluate, NetworkWeights};
use crate::training::{train_with, History, MinibatchOptimizer, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Admm,
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::Admm, OptimizerKind::Adam, OptimizerKind::Sgd];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Admm => "admm",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "admm" => Ok(OptimizerKind::Admm),
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidConfig(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Everything one training run depends on. Defaults are the MNIST setting:
/// 784-500-600-10, batch 3000, ReLU, `ρ = (0.2, 0.1, 0.05)`, `β = (0.2, 0.1)`,
/// `λ = 0.1`, `c = 0.05`, 100 epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub optimizer: OptimizerKind,
    pub activation: ActivationKind,
    pub lower: f64,
    pub upper: f64,
    pub rho: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda_reg: f64,
    pub surrogate_c: f64,
    pub surrogate_form: SurrogateForm,
    pub persist_duals: bool,
    /// SGD learning rate (default 0.3) or Adam step size (default 0.001).
    pub lr: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Full width chain `n_0, .., n_N`.
    pub layers: Vec<usize>,
    pub shuffle: bool,
    /// Write measured seconds per minibatch; `NA` otherwise, which makes the
    /// CSV output reproducible byte for byte.
    pub record_wallclock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Admm,
            activation: ActivationKind::Relu,
            lower: 0.0,
            upper: 1.0,
            rho: vec![0.2, 0.1, 0.05],
            beta: vec![0.2, 0.1],
            lambda_reg: 0.1,
            surrogate_c: 0.05,
            surrogate_form: SurrogateForm::Hessian,
            persist_duals: false,
            lr: None,
            epochs: 100,
            batch_size: 3000,
            seed: 0,
            layers: vec![784, 500, 600, 10],
            shuffle: false,
            record_wallclock: true,
        }
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl RunConfig {
    /// Every invalid field, in a stable order. Empty when the config is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.layers.len() < 2 || self.layers.contains(&0) {
            out.push(format!(
                "layers must list at least two positive widths, got {:?}",
                self.layers
            ));
        }
        let depth = self.layers.len().saturating_sub(1);
        if self.rho.len() != depth {
            out.push(format!(
                "rho needs {depth} values (one per layer), got {}",
                self.rho.len()
            ));
        }
        if self.beta.len() != depth.saturating_sub(1) {
            out.push(format!(
                "beta needs {} values (one per hidden layer), got {}",
                depth.saturating_sub(1),
                self.beta.len()
            ));
        }
        if let Some(r) = self.rho.iter().find(|r| !positive(**r)) {
            out.push(format!("rho values must be positive, got {r}"));
        }
        if let Some(b) = self.beta.iter().find(|b| !positive(**b)) {
            out.push(format!("beta values must be positive, got {b}"));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            out.push(format!("lambda must be non-negative, got {}", self.lambda_reg));
        }
        if !positive(self.surrogate_c) {
            out.push(format!("surrogate-c must be positive, got {}", self.surrogate_c));
        }
        if self.activation == ActivationKind::Dcutlu {
            if let Err(e) = Cutoffs::new(self.lower, self.upper) {
                out.push(e.to_string());
            }
        }
        if let Some(lr) = self.lr {
            if !positive(lr) {
                out.push(format!("lr must be positive, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            out.push("batch size must be positive".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn cutoffs(&self) -> Result<Cutoffs> {
        match self.activation {
            ActivationKind::Relu => Ok(Cutoffs::relu()),
            ActivationKind::Dcutlu => Cutoffs::new(self.lower, self.upper),
        }
    }

    pub fn hyper(&self) -> Result<HyperParams> {
        Ok(HyperParams::new(
            self.rho.clone(),
            self.beta.clone(),
            self.activation,
            self.cutoffs()?,
            self.lambda_reg,
            self.surrogate_c,
        )?
        .with_surrogate_form(self.surrogate_form)
        .with_persist_duals(self.persist_duals))
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            shuffle: self.shuffle,
            evaluate_test: true,
            record_wallclock: self.record_wallclock,
        }
    }

    /// Seeded uniform initialization shared by every optimizer.
    pub fn initial_weights(&self) -> Result<NetworkWeights> {
        NetworkWeights::init_uniform(&self.layers, self.seed)
    }

    pub fn optimizer(&self) -> Result<Box<dyn MinibatchOptimizer>> {
        self.validate()?;
        Ok(match self.optimizer {
            OptimizerKind::Admm => Box::new(AdmmTrainer::new(self.hyper()?)),
            OptimizerKind::Sgd => Box::new(BaselineTrainer::new(
                BaselineKind::Sgd {
                    lr: self.lr.unwrap_or(0.3),
                },
                self.cutoffs()?,
                self.lambda_reg,
            )),
            OptimizerKind::Adam => Box::new(BaselineTrainer::new(
                BaselineKind::Adam(AdamConfig {
                    step: self.lr.unwrap_or(AdamConfig::default().step),
                    ..AdamConfig::default()
                }),
                self.cutoffs()?,
                self.lambda_reg,
            )),
        })
    }

    /// Problems with running this config on `dataset`.
    pub fn dataset_problems(&self, dataset: &Dataset) -> Vec<String> {
        let mut out = Vec::new();
        let (Some(&n_in), Some(&n_out)) = (self.layers.first(), self.layers.last()) else {
            return out;
        };
        for (name, batch) in [("train", &dataset.train), ("test", &dataset.test)] {
            if batch.inputs.cols() != n_in || batch.targets.cols() != n_out {
                out.push(format!(
                    "{name} data has {} inputs and {} classes, layers expect {n_in} and {n_out}",
                    batch.inputs.cols(),
                    batch.targets.cols()
                ));
            }
        }
        if dataset.train.is_empty() {
            out.push("training set is empty".into());
        }
        out
    }

    fn check(&self, dataset: &Dataset) -> Result<()> {
        let mut problems = self.problems();
        problems.extend(self.dataset_problems(dataset));
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Trains one configuration from its seeded initialization.
pub fn run(config: &RunConfig, dataset: &Dataset) -> Result<(NetworkWeights, History)> {
    config.check(dataset)?;
    let mut optimizer = config.optimizer()?;
    train_with(dataset, config.initial_weights()?, optimizer.as_mut(), &config.schedule(), |_| false)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_else(|| "NA".into())
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_history<W: Write>(out: W, history: &History) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "epoch",
        "train_ce",
        "train_acc",
        "test_ce",
        "test_acc",
        "secs_per_minibatch",
    ])?;
    for r in &history.records {
        w.write_record([
            r.epoch.to_string(),
            fmt(r.train_ce),
            fmt(r.train_acc),
            fmt_opt(r.test_ce),
            fmt_opt(r.test_acc),
            fmt_opt(r.secs_per_minibatch),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct CompareRun {
    pub optimizer: OptimizerKind,
    pub history: History,
}

impl CompareRun {
    pub fn final_test_acc(&self) -> Option<f64> {
        self.history.last().and_then(|r| r.test_acc)
    }
}

pub fn history_file_name(optimizer: OptimizerKind) -> String {
    format!("history_{}.csv", optimizer.name())
}

/// Trains `config` once per optimizer, all from the same initialization and
/// partition, writing `history_<optimizer>.csv`, `summary.csv` and `gap.csv`
/// into `out_dir`.
pub fn run_compare(
    config: &RunConfig,
    optimizers: &[OptimizerKind],
    dataset: &Dataset,
    out_dir: &Path,
) -> Result<Vec<CompareRun>> {
    let configs: Vec<RunConfig> = optimizers
        .iter()
        .map(|&optimizer| RunConfig {
            optimizer,
            ..config.clone()
        })
        .collect();
    for c in &configs {
        c.check(dataset)?;
    }
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut runs = Vec::with_capacity(configs.len());
    for c in &configs {
        let (_, history) = run(c, dataset)?;
        write_history(create(&out_dir.join(history_file_name(c.optimizer)))?, &history)?;
        runs.push(CompareRun {
            optimizer: c.optimizer,
            history,
        });
    }
    write_summary(create(&out_dir.join("summary.csv"))?, &runs)?;
    write_gaps(create(&out_dir.join("gap.csv"))?, &runs)?;
    Ok(runs)
}

pub fn write_summary<W: Write>(out: W, runs: &[CompareRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["optimizer", "epochs", "final_train_acc", "final_test_acc", "final_gap"])?;
    for run in runs {
        let last = run.history.last();
        w.write_record([
            run.optimizer.name().to_string(),
            run.history.len().to_string(),
            fmt_opt(last.map(|r| r.train_acc)),
            fmt_opt(last.and_then(|r| r.test_acc)),
            fmt_opt(last.and_then(|r| r.gap())),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_gaps<W: Write>(out: W, runs: &[CompareRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "optimizer", "gap"])?;
    for run in runs {
        for r in &run.history.records {
            w.write_record([r.epoch.to_string(), run.optimizer.name().to_string(), fmt_opt(r.gap())])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub rates: Vec<f64>,
    pub activations: Vec<ActivationKind>,
    /// Mean per-sample training cross-entropy to reach.
    pub threshold: f64,
    pub epoch_cap: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rates: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            activations: vec![ActivationKind::Relu, ActivationKind::Dcutlu],
            threshold: 0.05,
            epoch_cap: 100,
        }
    }
}

impl SweepConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rates.is_empty() {
            out.push("sweep needs at least one rate".into());
        }
        if let Some(r) = self.rates.iter().find(|r| !positive(**r)) {
            out.push(format!("sweep rates must be positive, got {r}"));
        }
        if self.activations.is_empty() {
            out.push("sweep needs at least one activation".into());
        }
        if self.threshold.is_nan() {
            out.push("threshold must be a number".into());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub rate: f64,
    pub activation: ActivationKind,
    /// `None` when the cap was hit first.
    pub epochs_to_threshold: Option<usize>,
}

/// ADMM with every `ρ_i` and `β_i` set to each rate in turn, per activation,
/// counting epochs until the mean training cross-entropy is at most the
/// threshold. The initial weights count as epoch 0.
pub fn run_lr_sweep(base: &RunConfig, sweep: &SweepConfig, dataset: &Dataset) -> Result<Vec<SweepRow>> {
    let depth = base.layers.len().saturating_sub(1);
    let configs: Vec<RunConfig> = sweep
        .activations
        .iter()
        .flat_map(|&activation| {
            sweep.rates.iter().map(move |&rate| RunConfig {
                optimizer: OptimizerKind::Admm,
                activation,
                rho: vec![rate; depth],
                beta: vec![rate; depth.saturating_sub(1)],
                epochs: sweep.epoch_cap,
                ..base.clone()
            })
        })
        .collect();
    let mut problems = sweep.problems();
    for c in &configs {
        for p in c.problems().into_iter().chain(c.dataset_problems(dataset)) {
            if !problems.contains(&p) {
                problems.push(p);
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems.join("; ")));
    }

    let mut rows = Vec::with_capacity(configs.len());
    for c in &configs {
        let weights = c.initial_weights()?;
        let batches = partition(&dataset.train, c.batch_size, c.seed, c.shuffle)?;
        let initial = evaluate(&weights, &batches, c.cutoffs()?)?.mean_cross_entropy();
        let epochs_to_threshold = if initial <= sweep.threshold {
            Some(0)
        } else {
            let mut schedule = c.schedule();
            schedule.evaluate_test = false;
            schedule.record_wallclock = false;
            let mut optimizer = c.optimizer()?;
            let (_, history) = train_with(dataset, weights, optimizer.as_mut(), &schedule, |r| {
                r.train_ce <= sweep.threshold
            })?;
            history
                .last()
                .filter(|r| r.train_ce <= sweep.threshold)
                .map(|r| r.epoch)
        };
        rows.push(SweepRow {
            rate: c.rho[0],
            activation: c.activation,
            epochs_to_threshold,
        });
    }
    Ok(rows)
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow], epoch_cap: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rate", "activation", "epochs_to_threshold"])?;
    for r in rows {
        let epochs = r
            .epochs_to_threshold
            .map(|e| e.to_string())
            .unwrap_or_else(|| format!(">{epoch_cap}"));
        w.write_record([fmt(r.rate), r.activation.name().to_string(), epochs])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub optimizer: OptimizerKind,
    pub activation: ActivationKind,
    pub mean_secs: f64,
    pub std_secs: f64,
    pub samples: usize,
}

/// The rows of the timing table: SGD, Adam and ADMM with ReLU, then ADMM with
/// DCutLU, all sharing `base`'s other settings.
pub fn timing_configs(base: &RunConfig) -> Vec<RunConfig> {
    [
        (OptimizerKind::Sgd, ActivationKind::Relu),
        (OptimizerKind::Adam, ActivationKind::Relu),
        (OptimizerKind::Admm, ActivationKind::Relu),
        (OptimizerKind::Admm, ActivationKind::Dcutlu),
    ]
    .into_iter()
    .map(|(optimizer, activation)| RunConfig {
        optimizer,
        activation,
        ..base.clone()
    })
    .collect()
}

/// Mean and sample standard deviation of per-minibatch wall-clock time over
/// `measured` steps after `warmup` untimed ones, cycling through the
/// partition. Runs sequentially.
pub fn run_timing(
    configs: &[RunConfig],
    dataset: &Dataset,
    warmup: usize,
    measured: usize,
) -> Result<Vec<TimingRow>> {
    if measured == 0 {
        return Err(Error::InvalidConfig("timing needs at least one measured minibatch".into()));
    }
    for c in configs {
        c.check(dataset)?;
    }
    let mut rows = Vec::with_capacity(configs.len());
    for c in configs {
        let batches = partition(&dataset.train, c.batch_size, c.seed, c.shuffle)?;
        let mut optimizer = c.optimizer()?;
        let mut weights = c.initial_weights()?;
        let mut times = Vec::with_capacity(measured);
        for k in 0..warmup + measured {
            let index = k % batches.len();
            let start = Instant::now();
            weights = optimizer.step(weights, &batches[index], index)?;
            let secs = start.elapsed().as_secs_f64();
            if k >= warmup {
                times.push(secs);
            }
        }
        let (mean_secs, std_secs) = mean_std(&times);
        rows.push(TimingRow {
            optimizer: c.optimizer,
            activation: c.activation,
            mean_secs,
            std_secs,
            samples: times.len(),
        });
    }
    Ok(rows)
}

/// Mean and sample (`n - 1`) standard deviation; zero spread for one sample.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn write_timing<W: Write>(out: W, rows: &[TimingRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["optimizer", "activation", "mean_secs", "std_secs"])?;
    for r in rows {
        w.write_record([
            r.optimizer.name().to_string(),
            r.activation.name().to_string(),
            fmt(r.mean_secs),
            fmt(r.std_secs),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes through [`create`] for callers holding a path.
pub fn write_to_path(path: &Path, f: impl FnOnce(File) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: PathBuf::from(parent),
            source,
        })?;
    }
    f(create(path)?)
}
