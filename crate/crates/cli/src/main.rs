use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use layer_admm::admm::SurrogateForm;
use layer_admm::data::{synthetic, Dataset};
use layer_admm::experiment::{
    run, run_compare, run_lr_sweep, run_timing, timing_configs, write_history, write_sweep, write_timing,
    write_to_path,
};
use layer_admm::{ActivationKind, OptimizerKind, RunConfig, SweepConfig};

#[derive(Parser)]
#[command(name = "layer-admm", version, about = "Train feedforward nets by layerwise ADMM and compare against SGD and Adam")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one optimizer and write its per-epoch history CSV.
    Train(Common),
    /// Train ADMM, Adam and SGD from the same initialization; writes
    /// history_<optimizer>.csv, summary.csv and gap.csv into --out.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Optimizers to compare.
        #[arg(long, value_delimiter = ',', default_value = "admm,adam,sgd")]
        optimizers: Vec<OptimizerKind>,
    },
    /// Epochs until the mean train cross-entropy reaches a threshold, for each
    /// rate (every rho and beta set to it) and activation.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2,0.3,0.4,0.5", allow_negative_numbers = true)]
        rates: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "relu,dcutlu")]
        activations: Vec<ActivationKind>,
        #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
        threshold: f64,
        #[arg(long, default_value_t = 100)]
        epoch_cap: usize,
    },
    /// Mean and standard deviation of seconds per minibatch for SGD, Adam,
    /// ADMM-ReLU and ADMM-DCutLU.
    Timing {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 20)]
        measured: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "admm")]
    optimizer: OptimizerKind,
    #[arg(long, default_value = "relu")]
    activation: ActivationKind,
    /// Lower cutoff for dcutlu.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    lower: f64,
    /// Upper cutoff for dcutlu.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    upper: f64,
    /// One penalty per layer, input side first.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05", allow_negative_numbers = true)]
    rho: Vec<f64>,
    /// One penalty per hidden layer.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.1", allow_negative_numbers = true)]
    beta: Vec<f64>,
    /// Weight of the squared-norm regularizer on every (W, b).
    #[arg(long = "lambda", default_value_t = 0.1, allow_negative_numbers = true)]
    lambda_reg: f64,
    /// Curvature of the quadratic model of the loss at the top layer.
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    surrogate_c: f64,
    /// `hessian` reads c as (c/2)||.||², `unhalved` as c||.||².
    #[arg(long, default_value = "hessian", value_parser = parse_surrogate)]
    surrogate_form: SurrogateForm,
    /// Keep the layer multipliers between visits to the same minibatch.
    #[arg(long)]
    persist_duals: bool,
    /// Step size for sgd (default 0.3) or adam (default 0.001).
    #[arg(long, allow_negative_numbers = true)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 3000)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Layer widths from input to output.
    #[arg(long, value_delimiter = ',', default_value = "784,500,600,10")]
    layers: Vec<usize>,
    /// Reshuffle the minibatch partition every epoch.
    #[arg(long)]
    shuffle: bool,
    /// Write NA instead of measured times so that reruns are byte-identical.
    #[arg(long)]
    no_wallclock: bool,
    /// Directory holding the four MNIST IDX files.
    #[arg(long, env = "MNIST_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Use this many seeded synthetic training samples of the configured
    /// shape instead of MNIST (a sixth as many test samples).
    #[arg(long, conflicts_with = "data_dir")]
    synthetic: Option<usize>,
    /// Output file for train, sweep and timing; directory for compare.
    #[arg(long)]
    out: PathBuf,
}

fn parse_surrogate(s: &str) -> Result<SurrogateForm, String> {
    match s {
        "hessian" => Ok(SurrogateForm::Hessian),
        "unhalved" => Ok(SurrogateForm::Unhalved),
        other => Err(format!("expected hessian or unhalved, got '{other}'")),
    }
}

impl Common {
    fn config(&self) -> RunConfig {
        RunConfig {
            optimizer: self.optimizer,
            activation: self.activation,
            lower: self.lower,
            upper: self.upper,
            rho: self.rho.clone(),
            beta: self.beta.clone(),
            lambda_reg: self.lambda_reg,
            surrogate_c: self.surrogate_c,
            surrogate_form: self.surrogate_form,
            persist_duals: self.persist_duals,
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            layers: self.layers.clone(),
            shuffle: self.shuffle,
            record_wallclock: !self.no_wallclock,
        }
    }

    fn data_problem(&self) -> Option<String> {
        match (&self.data_dir, self.synthetic) {
            (_, Some(0)) => Some("--synthetic needs a positive sample count".into()),
            (_, Some(_)) => None,
            (None, None) => Some("no data: pass --data-dir, set MNIST_DATA_DIR, or pass --synthetic".into()),
            (Some(dir), None) if !dir.is_dir() => Some(format!("data directory {} does not exist", dir.display())),
            _ => None,
        }
    }

    fn dataset(&self) -> Result<Dataset> {
        if let Some(n) = self.synthetic {
            let n_in = self.layers.first().copied().unwrap_or(1);
            let classes = self.layers.last().copied().unwrap_or(1);
            return Ok(synthetic(n, n.div_ceil(6), n_in, classes, 0.5, self.seed)?);
        }
        let dir = self.data_dir.as_deref().expect("checked by data_problem");
        Dataset::load_mnist(dir).with_context(|| format!("loading MNIST from {}", dir.display()))
    }
}

/// Reports every problem with the config, the data location and then the
/// data itself before any training starts.
fn prepare(common: &Common, extra: Vec<String>) -> Result<(RunConfig, Dataset)> {
    let config = common.config();
    let mut problems = config.problems();
    problems.extend(extra);
    problems.extend(common.data_problem());
    if !problems.is_empty() {
        bail!(list(&problems));
    }
    let dataset = common.dataset()?;
    let problems = config.dataset_problems(&dataset);
    if !problems.is_empty() {
        bail!(list(&problems));
    }
    Ok((config, dataset))
}

fn list(problems: &[String]) -> String {
    let mut out = format!("invalid configuration ({} problems):", problems.len());
    for p in problems {
        out.push_str("\n  - ");
        out.push_str(p);
    }
    out
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let (config, dataset) = prepare(&common, Vec::new())?;
            let (_, history) = run(&config, &dataset)?;
            write_to_path(&common.out, |f| write_history(f, &history))?;
            if let Some(r) = history.last() {
                eprintln!(
                    "{} after {} epochs: train acc {:.4}, test acc {}",
                    config.optimizer.name(),
                    r.epoch,
                    r.train_acc,
                    r.test_acc.map_or("NA".into(), |a| format!("{a:.4}"))
                );
            }
        }
        Command::Compare { common, optimizers } => {
            let extra = if optimizers.is_empty() { vec!["no optimizers given".into()] } else { Vec::new() };
            let (config, dataset) = prepare(&common, extra)?;
            let runs = run_compare(&config, &optimizers, &dataset, &common.out)?;
            for r in &runs {
                eprintln!(
                    "{}: final test acc {}",
                    r.optimizer.name(),
                    r.final_test_acc().map_or("NA".into(), |a| format!("{a:.4}"))
                );
            }
        }
        Command::Sweep { common, rates, activations, threshold, epoch_cap } => {
            let sweep = SweepConfig { rates, activations, threshold, epoch_cap };
            let (config, dataset) = prepare(&common, sweep.problems())?;
            let rows = run_lr_sweep(&config, &sweep, &dataset)?;
            write_to_path(&common.out, |f| write_sweep(f, &rows, sweep.epoch_cap))?;
        }
        Command::Timing { common, warmup, measured } => {
            let extra = if measured == 0 { vec!["--measured must be positive".into()] } else { Vec::new() };
            let (config, dataset) = prepare(&common, extra)?;
            let rows = run_timing(&timing_configs(&config), &dataset, warmup, measured)?;
            write_to_path(&common.out, |f| write_timing(f, &rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
