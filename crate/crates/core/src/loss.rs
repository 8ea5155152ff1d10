//! Losses on model output features, `ℓσ(z, y) = ℓ(σ(z), y)`.
//!
//! The final activation σ is folded into the loss kind: identity for
//! regression, softmax for classification. Both are averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{GalError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over rows of `½‖z − y‖²`.
    MeanSquaredError,
    /// Mean over rows of `−log softmax(z)[y]`.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(Matrix),
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(m) => m.rows(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select_rows(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Real(m) => Targets::Real(m.select_rows(indices)),
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
        }
    }
}

/// A differentiable scalar loss of a feature matrix.
pub trait FeatureLoss {
    fn value(&self, z: &Matrix) -> Result<f64>;

    /// Loss and its gradient with respect to `z`.
    fn value_and_grad(&self, z: &Matrix) -> Result<(f64, Matrix)>;
}

/// A [`LossKind`] bound to a batch of targets.
#[derive(Debug, Clone, Copy)]
pub struct SupervisedLoss<'a> {
    pub kind: LossKind,
    pub targets: &'a Targets,
}

impl<'a> SupervisedLoss<'a> {
    pub fn new(kind: LossKind, targets: &'a Targets) -> Self {
        Self { kind, targets }
    }
}

impl FeatureLoss for SupervisedLoss<'_> {
    fn value(&self, z: &Matrix) -> Result<f64> {
        loss_value(z, self.targets, self.kind)
    }

    fn value_and_grad(&self, z: &Matrix) -> Result<(f64, Matrix)> {
        loss_and_feature_grad(z, self.targets, self.kind)
    }
}

fn check_batch(z: &Matrix, y: &Targets) -> Result<()> {
    if z.rows() != y.len() {
        return Err(GalError::ShapeMismatch(format!(
            "{} feature rows but {} targets",
            z.rows(),
            y.len()
        )));
    }
    if z.rows() == 0 {
        return Err(GalError::ShapeMismatch("empty batch".into()));
    }
    Ok(())
}

fn real_targets<'a>(z: &Matrix, y: &'a Targets) -> Result<&'a Matrix> {
    match y {
        Targets::Real(m) if m.shape() == z.shape() => Ok(m),
        Targets::Real(m) => Err(GalError::ShapeMismatch(format!(
            "targets {}x{} vs features {}x{}",
            m.rows(),
            m.cols(),
            z.rows(),
            z.cols()
        ))),
        Targets::Classes(_) => Err(GalError::ShapeMismatch(
            "mean squared error needs real-valued targets".into(),
        )),
    }
}

fn check_class(index: usize, classes: usize) -> Result<()> {
    if index >= classes {
        return Err(GalError::ClassIndexOutOfRange { index, classes });
    }
    Ok(())
}

/// Row target distribution for cross-entropy: one-hot from an index, or a
/// row of a real target matrix (one-hot or soft labels).
fn class_weight(y: &Targets, row: usize, col: usize) -> f64 {
    match y {
        Targets::Classes(c) => {
            if c[row] == col {
                1.0
            } else {
                0.0
            }
        }
        Targets::Real(m) => m.get(row, col),
    }
}

fn check_ce_targets(z: &Matrix, y: &Targets) -> Result<()> {
    match y {
        Targets::Classes(c) => c.iter().try_for_each(|&i| check_class(i, z.cols())),
        Targets::Real(m) => real_targets(z, y).map(|_| ()).and_then(|_| {
            if m.as_slice().iter().any(|&p| p < 0.0) {
                Err(GalError::ShapeMismatch(
                    "cross-entropy targets must be non-negative".into(),
                ))
            } else {
                Ok(())
            }
        }),
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn loss_value(z: &Matrix, y: &Targets, kind: LossKind) -> Result<f64> {
    check_batch(z, y)?;
    let n = z.rows() as f64;
    match kind {
        LossKind::MeanSquaredError => {
            let t = real_targets(z, y)?;
            let total: f64 = z
                .as_slice()
                .iter()
                .zip(t.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Ok(0.5 * total / n)
        }
        LossKind::SoftmaxCrossEntropy => {
            check_ce_targets(z, y)?;
            let mut total = 0.0;
            for (r, row) in z.row_iter().enumerate() {
                let lse = log_sum_exp(row);
                for (c, &zc) in row.iter().enumerate() {
                    let w = class_weight(y, r, c);
                    if w != 0.0 {
                        total += w * (lse - zc);
                    }
                }
            }
            Ok(total / n)
        }
    }
}

/// Mean loss and `G = ∇_Z` of it. For cross-entropy with one-hot targets
/// `G = (softmax(Z) − onehot(Y)) / n`.
pub fn loss_and_feature_grad(z: &Matrix, y: &Targets, kind: LossKind) -> Result<(f64, Matrix)> {
    let loss = loss_value(z, y, kind)?;
    let n = z.rows() as f64;
    let grad = match kind {
        LossKind::MeanSquaredError => {
            let t = real_targets(z, y)?;
            z.sub(t)?.scale(1.0 / n)
        }
        LossKind::SoftmaxCrossEntropy => {
            let mut g = Matrix::zeros(z.rows(), z.cols());
            for r in 0..z.rows() {
                let row = z.row(r);
                let lse = log_sum_exp(row);
                let mass: f64 = (0..z.cols()).map(|c| class_weight(y, r, c)).sum();
                for (c, &zc) in row.iter().enumerate() {
                    let p = (zc - lse).exp();
                    g.set(r, c, (mass * p - class_weight(y, r, c)) / n);
                }
            }
            g
        }
    };
    Ok((loss, grad))
}
