//! The double-cutoff linear unit `min(max(p, l), u)`, its slack decomposition
//! `P = X`, `X + Y = max(P, l)`, `X + Y + Z = min(max(P, l), u)`, and the
//! Euclidean projection onto the constraint set that the cutoff masks select.
//!
//! ReLU is the `(l, u) = (0, +inf)` case. With an infinite upper cutoff the
//! `Z` block and the upper mask are identically zero and every upper-cutoff
//! branch is skipped.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Which nonlinearity the hidden layers use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
    Dcutlu,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Dcutlu => "dcutlu",
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(ActivationKind::Relu),
            "dcutlu" => Ok(ActivationKind::Dcutlu),
            other => Err(Error::InvalidConfig(format!("unknown activation '{other}'"))),
        }
    }
}

/// Lower and upper thresholds with `l < u`; `u` may be `+inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cutoffs {
    lower: f64,
    upper: f64,
}

impl Cutoffs {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || upper.is_nan() || upper == f64::NEG_INFINITY || lower >= upper {
            return Err(Error::InvalidConfig(format!(
                "cutoffs need finite l < u, got l={lower}, u={upper}"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// `(0, +inf)`.
    pub fn relu() -> Self {
        Self {
            lower: 0.0,
            upper: f64::INFINITY,
        }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// False in ReLU mode.
    pub fn has_upper(&self) -> bool {
        self.upper.is_finite()
    }

    #[inline]
    pub fn apply(&self, p: f64) -> f64 {
        p.max(self.lower).min(self.upper)
    }
}

/// Membership of each element in the lower-cutoff and upper-cutoff index sets.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffMasks {
    rows: usize,
    cols: usize,
    lower: Vec<bool>,
    upper: Vec<bool>,
}

impl CutoffMasks {
    /// Masks with every element in the complement sets.
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            lower: vec![false; rows * cols],
            upper: vec![false; rows * cols],
        }
    }

    pub fn from_parts(rows: usize, cols: usize, lower: Vec<bool>, upper: Vec<bool>) -> Result<Self> {
        if lower.len() != rows * cols || upper.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "masks",
                left: (rows, cols),
                right: (lower.len(), upper.len()),
            });
        }
        if lower.iter().zip(&upper).any(|(&l, &u)| l && u) {
            return Err(Error::InvalidConfig(
                "lower and upper masks overlap".to_string(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            lower,
            upper,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn lower(&self) -> &[bool] {
        &self.lower
    }

    pub fn upper(&self) -> &[bool] {
        &self.upper
    }
}

/// A matrix triple `(X, Y, Z)`. Used for the slack variables, their auxiliary
/// copies and the multipliers attached to them.
#[derive(Clone, Debug, PartialEq)]
pub struct SlackTriple {
    pub x: Matrix,
    pub y: Matrix,
    pub z: Matrix,
}

impl SlackTriple {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            x: Matrix::zeros(rows, cols),
            y: Matrix::zeros(rows, cols),
            z: Matrix::zeros(rows, cols),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.x.shape()
    }

    /// `X + Y + Z`, summed left to right.
    pub fn sum(&self) -> Matrix {
        let mut out = self.x.clone();
        for ((o, &y), &z) in out
            .as_mut_slice()
            .iter_mut()
            .zip(self.y.as_slice())
            .zip(self.z.as_slice())
        {
            *o = (*o + y) + z;
        }
        out
    }
}

/// Elementwise `min(max(p, l), u)`.
pub fn dcutlu(p: &Matrix, cut: Cutoffs) -> Matrix {
    p.map(|v| cut.apply(v))
}

/// Splits the pre-activation `P` into slacks and records which elements fall
/// below `l` or above `u`. Elements sitting exactly on a cutoff belong to the
/// complement sets.
pub fn decompose(p: &Matrix, cut: Cutoffs) -> (SlackTriple, CutoffMasks) {
    let (rows, cols) = p.shape();
    let n = rows * cols;
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let (l, u) = (cut.lower(), cut.upper());
    let with_upper = cut.has_upper();
    for &v in p.as_slice() {
        let lifted = v.max(l);
        y.push(lifted - v);
        lower.push(v < l);
        if with_upper {
            z.push(lifted.min(u) - lifted);
            upper.push(v > u);
        } else {
            z.push(0.0);
            upper.push(false);
        }
    }
    let slack = SlackTriple {
        x: p.clone(),
        y: Matrix::from_vec(rows, cols, y).expect("shape preserved"),
        z: Matrix::from_vec(rows, cols, z).expect("shape preserved"),
    };
    let masks = CutoffMasks {
        rows,
        cols,
        lower,
        upper,
    };
    (slack, masks)
}

/// Nearest point to `(a, b, c)` in the closure of the constraint set of one
/// element.
///
/// * lower element: `x + y = l`, `x <= l`, `z = 0`
/// * upper element: `x + z = u`, `x >= u`, `y = 0`
/// * otherwise: `l <= x <= u`, `y = 0`, `z = 0`
#[inline]
pub fn project_element(
    a: f64,
    b: f64,
    c: f64,
    in_lower: bool,
    in_upper: bool,
    cut: Cutoffs,
) -> (f64, f64, f64) {
    let (l, u) = (cut.lower(), cut.upper());
    if in_lower {
        // Minimize (x-a)^2 + (l-x-b)^2 on x <= l.
        let x = (0.5 * (a - b + l)).min(l);
        (x, l - x, 0.0)
    } else if in_upper {
        let x = (0.5 * (a - c + u)).max(u);
        (x, 0.0, u - x)
    } else {
        (a.max(l).min(u), 0.0, 0.0)
    }
}

/// Projects the targets `(A, B, C)` elementwise; see [`project_element`].
pub fn project_slack(targets: &SlackTriple, masks: &CutoffMasks, cut: Cutoffs) -> Result<SlackTriple> {
    let shape = targets.shape();
    if masks.shape() != shape || targets.y.shape() != shape || targets.z.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "project_slack",
            left: shape,
            right: masks.shape(),
        });
    }
    let mut out = SlackTriple::zeros(shape.0, shape.1);
    let with_upper = cut.has_upper();
    let (xs, ys, zs) = (
        targets.x.as_slice(),
        targets.y.as_slice(),
        targets.z.as_slice(),
    );
    let (ox, oy, oz) = (
        out.x.as_mut_slice(),
        out.y.as_mut_slice(),
        out.z.as_mut_slice(),
    );
    for i in 0..xs.len() {
        let upper = with_upper && masks.upper[i];
        (ox[i], oy[i], oz[i]) = project_element(xs[i], ys[i], zs[i], masks.lower[i], upper, cut);
    }
    Ok(out)
}
