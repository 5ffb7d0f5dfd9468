use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    CrossEntropy,
}

/// Regression values or class labels.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Values(Array2<f64>),
    Labels(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(v) => v.nrows(),
            Targets::Labels(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx`, in order.
    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Values(v) => Targets::Values(v.select(ndarray::Axis(0), idx)),
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Mean over every regression value; 0 for labels.
    pub fn mean(&self) -> f64 {
        match self {
            Targets::Values(v) => v.mean().unwrap_or(0.0),
            Targets::Labels(_) => 0.0,
        }
    }
}

pub fn loss(kind: LossKind, pred: &Array2<f64>, targets: &Targets) -> Result<f64> {
    loss_and_grad(kind, pred, targets).map(|(l, _)| l)
}

/// Loss and its gradient with respect to `pred`.
pub fn loss_and_grad(
    kind: LossKind,
    pred: &Array2<f64>,
    targets: &Targets,
) -> Result<(f64, Array2<f64>)> {
    let (b, k) = pred.dim();
    match (kind, targets) {
        (LossKind::Mse, Targets::Values(y)) => {
            if y.dim() != pred.dim() {
                return Err(Error::DimensionMismatch {
                    what: "targets",
                    expected: k,
                    found: y.ncols(),
                });
            }
            let n = (b * k) as f64;
            let diff = pred - y;
            let l = diff.iter().map(|d| d * d).sum::<f64>() / n;
            Ok((l, diff.mapv(|d| 2.0 * d / n)))
        }
        (LossKind::CrossEntropy, Targets::Labels(labels)) => {
            if labels.len() != b {
                return Err(Error::DimensionMismatch {
                    what: "labels",
                    expected: b,
                    found: labels.len(),
                });
            }
            let mut grad = Array2::zeros((b, k));
            let mut total = 0.0;
            for (r, &label) in labels.iter().enumerate() {
                if label >= k {
                    return Err(Error::LabelOutOfRange { label, classes: k });
                }
                let row = pred.row(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                let lse = m + z.ln();
                total += lse - row[label];
                for j in 0..k {
                    let p = (row[j] - lse).exp();
                    grad[[r, j]] = (p - if j == label { 1.0 } else { 0.0 }) / b as f64;
                }
            }
            Ok((total / b as f64, grad))
        }
        (LossKind::Mse, Targets::Labels(_)) => {
            Err(Error::TaskSpec("mse needs value targets".into()))
        }
        (LossKind::CrossEntropy, Targets::Values(_)) => {
            Err(Error::TaskSpec("cross entropy needs label targets".into()))
        }
    }
}

/// Fraction of rows whose largest logit is the label.
pub fn accuracy(pred: &Array2<f64>, labels: &[usize]) -> f64 {
    let hits = pred
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &l)| {
            let best = row
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc },
                );
            best.0 == l
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}
