//! MNIST ingestion from IDX files, one-hot targets and minibatch partitioning.
//!
//! IDX layout: a big-endian `u32` magic (`0x0000_0803` for 3-d unsigned-byte
//! images, `0x0000_0801` for 1-d labels), one big-endian `u32` per dimension,
//! then the raw bytes. Pixels are scaled by `1/255` and flattened row-major.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::argmax;
use crate::matrix::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Inputs `D` (`m x n_in`) paired row-by-row with one-hot targets `O` (`m x n_out`).
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::ShapeMismatch {
                op: "batch",
                left: inputs.shape(),
                right: targets.shape(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn from_labels(inputs: Matrix, labels: &[u8], classes: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::InvalidConfig(format!(
                "{} images but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Self::new(inputs, one_hot(labels, classes)?)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Arg-max of each target row.
    pub fn labels(&self) -> Vec<u8> {
        (0..self.targets.rows())
            .map(|r| argmax(self.targets.row(r)) as u8)
            .collect()
    }

    fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select_rows(idx),
            targets: self.targets.select_rows(idx),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Batch,
    pub test: Batch,
}

impl Dataset {
    /// Loads the four standard (uncompressed) MNIST files from `dir`.
    pub fn load_mnist(dir: &Path) -> Result<Self> {
        let load = |images: &str, labels: &str| -> Result<Batch> {
            let x = load_idx_images(&dir.join(images))?;
            let y = load_idx_labels(&dir.join(labels))?;
            Batch::from_labels(x, &y, 10)
        };
        Ok(Self {
            train: load(TRAIN_IMAGES, TRAIN_LABELS)?,
            test: load(TEST_IMAGES, TEST_LABELS)?,
        })
    }

    /// Writes both splits in the same layout [`Dataset::load_mnist`] reads.
    pub fn write_mnist_layout(&self, dir: &Path, image_dims: (usize, usize)) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_idx_images(&dir.join(TRAIN_IMAGES), &self.train.inputs, image_dims)?;
        write_idx_labels(&dir.join(TRAIN_LABELS), &self.train.labels())?;
        write_idx_images(&dir.join(TEST_IMAGES), &self.test.inputs, image_dims)?;
        write_idx_labels(&dir.join(TEST_LABELS), &self.test.labels())?;
        Ok(())
    }
}

/// Seeded stand-in with the MNIST layout: every class gets a random
/// prototype in `[0, 1]^n_in`, samples add uniform noise of half-width `noise`
/// to their class prototype and clamp to `[0, 1]`. Labels are drawn uniformly.
pub fn synthetic(
    n_train: usize,
    n_test: usize,
    n_in: usize,
    classes: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || classes > 256 || n_in == 0 {
        return Err(Error::InvalidConfig(format!(
            "synthetic data needs 1..=256 classes and positive width, got {classes} and {n_in}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<f64> = (0..classes * n_in).map(|_| rng.random::<f64>()).collect();
    let mut draw = |n: usize| -> Result<Batch> {
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..classes) as u8).collect();
        let mut data = Vec::with_capacity(n * n_in);
        for &label in &labels {
            let proto = &prototypes[label as usize * n_in..(label as usize + 1) * n_in];
            data.extend(
                proto
                    .iter()
                    .map(|&p| (p + noise * rng.random_range(-1.0..=1.0)).clamp(0.0, 1.0)),
            );
        }
        Batch::from_labels(Matrix::from_vec(n, n_in, data)?, &labels, classes)
    };
    let train = draw(n_train)?;
    let test = draw(n_test)?;
    Ok(Dataset { train, test })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn idx_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses the header; returns the dimensions and the payload.
fn parse_idx<'a>(path: &Path, bytes: &'a [u8], magic: u32) -> Result<(Vec<usize>, &'a [u8])> {
    let found = be_u32(bytes, 0).ok_or_else(|| idx_error(path, "file shorter than the magic number"))?;
    if found != magic {
        return Err(idx_error(
            path,
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let ndim = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let v = be_u32(bytes, 4 + 4 * d).ok_or_else(|| idx_error(path, "truncated header"))?;
        dims.push(v as usize);
    }
    let payload = &bytes[4 + 4 * ndim..];
    let expected: usize = dims.iter().product();
    if payload.len() != expected {
        return Err(idx_error(
            path,
            format!(
                "payload has {} bytes, header {:?} requires {expected}",
                payload.len(),
                dims
            ),
        ));
    }
    Ok((dims, payload))
}

/// Reads an image file into an `images x (rows*cols)` matrix scaled to `[0, 1]`.
pub fn load_idx_images(path: &Path) -> Result<Matrix> {
    let bytes = read_file(path)?;
    let (dims, payload) = parse_idx(path, &bytes, IMAGES_MAGIC)?;
    let (n, width) = (dims[0], dims[1] * dims[2]);
    let data = payload.iter().map(|&p| f64::from(p) / 255.0).collect();
    Matrix::from_vec(n, width, data)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let (_, payload) = parse_idx(path, &bytes, LABELS_MAGIC)?;
    Ok(payload.to_vec())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: PathBuf::from(path),
        source,
    })
}

/// Writes pixels `round(255 * v)`; values must lie in `[0, 1]`.
pub fn write_idx_images(path: &Path, images: &Matrix, dims: (usize, usize)) -> Result<()> {
    if dims.0 * dims.1 != images.cols() {
        return Err(Error::ShapeMismatch {
            op: "write_idx_images",
            left: images.shape(),
            right: dims,
        });
    }
    if images.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidConfig("pixel values must lie in [0, 1]".into()));
    }
    let mut bytes = Vec::with_capacity(16 + images.as_slice().len());
    for v in [IMAGES_MAGIC, images.rows() as u32, dims.0 as u32, dims.1 as u32] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend(images.as_slice().iter().map(|&v| (v * 255.0).round() as u8));
    write_file(path, &bytes)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    write_file(path, &bytes)
}

pub fn one_hot(labels: &[u8], classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (row, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes,
            });
        }
        m.set(row, label, 1.0);
    }
    Ok(m)
}

/// Splits `train` into consecutive batches of `batch_size` rows (the last one
/// may be short). With `shuffle`, rows are first permuted by a ChaCha8 stream
/// seeded with `seed`.
pub fn partition(train: &Batch, batch_size: usize, seed: u64, shuffle: bool) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(batch_size).map(|idx| train.select(idx)).collect())
}
