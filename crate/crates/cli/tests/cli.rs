use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use layer_admm::data::synthetic;

fn layer_admm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layer-admm"))
        .args(args)
        .env_remove("MNIST_DATA_DIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &[
    "--layers", "12,8,6,10", "--batch-size", "40", "--epochs", "2", "--no-wallclock",
];

/// Tiny MNIST-layout directory with 12-pixel images.
fn fixture(dir: &Path) {
    synthetic(120, 30, 12, 10, 0.5, 4).unwrap().write_mnist_layout(dir, (3, 4)).unwrap();
}

#[test]
fn every_config_problem_is_reported_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h.csv");
    let o = layer_admm(&[
        "train", "--rho", "0.1,-1", "--beta", "0.1,0.1,0.1", "--lambda", "-2", "--batch-size", "0",
        "--activation", "dcutlu", "--lower", "2", "--upper", "1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for needle in [
        "rho needs 3 values",
        "beta needs 2 values",
        "rho values must be positive",
        "lambda must be non-negative",
        "batch size must be positive",
        "no data",
    ] {
        assert!(err.contains(needle), "missing '{needle}' in:\n{err}");
    }
    assert!(err.contains("cutoff") || err.contains("lower"), "{err}");
    assert!(!out.exists());
}

#[test]
fn missing_data_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = layer_admm(&["train", "--data-dir", "/nonexistent/mnist", "--out", dir.path().join("h.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/mnist does not exist"), "{}", stderr(&o));
}

#[test]
fn shape_mismatch_with_data_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let o = layer_admm(&["train", "--data-dir", dir.path().to_str().unwrap(), "--out", dir.path().join("h.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train data has 12 inputs and 10 classes, layers expect 784 and 10"), "{}", stderr(&o));
}

#[test]
fn train_and_compare_on_idx_fixture() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let data = dir.path().to_str().unwrap();
    let history = dir.path().join("out/train.csv");
    let mut args = vec!["train", "--data-dir", data, "--out", history.to_str().unwrap(), "--optimizer", "sgd"];
    args.extend_from_slice(SMALL);
    let o = layer_admm(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&history).unwrap();
    assert!(text.starts_with("epoch,train_ce,train_acc,test_ce,test_acc,secs_per_minibatch\n1,"));
    assert_eq!(text.lines().count(), 3);

    let runs: Vec<String> = (0..2)
        .map(|k| {
            let out = dir.path().join(format!("cmp{k}"));
            let mut args = vec!["compare", "--data-dir", data, "--out", out.to_str().unwrap(), "--shuffle"];
            args.extend_from_slice(SMALL);
            let o = layer_admm(&args);
            assert!(o.status.success(), "{}", stderr(&o));
            ["history_admm.csv", "history_adam.csv", "history_sgd.csv", "summary.csv", "gap.csv"]
                .iter()
                .map(|f| fs::read_to_string(out.join(f)).unwrap())
                .collect()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn sweep_and_timing_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep.csv");
    let mut args = vec![
        "sweep", "--synthetic", "120", "--rates", "0.1,0.2", "--threshold", "-1", "--epoch-cap", "2",
        "--out", sweep.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL);
    let o = layer_admm(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(&sweep).unwrap(),
        "rate,activation,epochs_to_threshold\n0.1,relu,>2\n0.2,relu,>2\n0.1,dcutlu,>2\n0.2,dcutlu,>2\n"
    );

    let timing = dir.path().join("timing.csv");
    let mut args = vec!["timing", "--synthetic", "120", "--warmup", "1", "--measured", "3", "--out", timing.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let o = layer_admm(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&timing).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "optimizer,activation,mean_secs,std_secs");
    assert_eq!(rows.len(), 5);
    assert!(rows[4].starts_with("admm,dcutlu,"));

    let o = layer_admm(&["sweep", "--synthetic", "120", "--rates", "0,-1", "--out", sweep.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep rates must be positive"), "{}", stderr(&o));
}
