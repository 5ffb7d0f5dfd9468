use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which statistics normalization uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    /// Batch statistics; running buffers are updated.
    TrainBatchStats,
    /// Batch statistics; running buffers are left untouched.
    #[default]
    EvalBatchStatsFrozen,
    /// Running statistics.
    EvalRunningStats,
}

impl BnMode {
    pub fn uses_batch_stats(&self) -> bool {
        !matches!(self, BnMode::EvalRunningStats)
    }
}

/// Per-channel batch normalization with learnable scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub mode: BnMode,
}

/// Saved quantities for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub batch_stats: bool,
}

/// Gradients of the learnable normalization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BnGrad {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNorm {
    pub fn new(d: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
            running_mean: vec![0.0; d],
            running_var: vec![1.0; d],
            eps: 1e-5,
            momentum: 0.1,
            mode: BnMode::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn n_params(&self) -> usize {
        2 * self.dim()
    }

    /// Normalizes `h` in the configured mode; `TrainBatchStats` also
    /// updates the running buffers.
    pub fn apply(&mut self, h: &Array2<f64>) -> Result<Array2<f64>> {
        let (out, _, stats) = self.normalize(h, self.mode)?;
        if let (BnMode::TrainBatchStats, Some((mean, var))) = (self.mode, stats) {
            self.update_running(&mean, &var);
        }
        Ok(out)
    }

    /// Per-channel `(scale, shift)` equivalent to running-stat evaluation.
    pub fn folded(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = (0..self.dim())
            .map(|j| self.gamma[j] / (self.running_var[j] + self.eps).sqrt())
            .collect();
        let shift = (0..self.dim())
            .map(|j| self.beta[j] - scale[j] * self.running_mean[j])
            .collect();
        (scale, shift)
    }

    /// Momentum update of the running buffers from batch statistics.
    pub(crate) fn update_running(&mut self, mean: &Array1<f64>, var: &Array1<f64>) {
        for j in 0..self.dim() {
            self.running_mean[j] =
                (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
            self.running_var[j] =
                (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j];
        }
    }

    /// Normalizes without touching the buffers. Returns the batch mean and
    /// biased variance when batch statistics were used.
    #[allow(clippy::type_complexity)]
    pub(crate) fn normalize(
        &self,
        h: &Array2<f64>,
        mode: BnMode,
    ) -> Result<(Array2<f64>, BnCache, Option<(Array1<f64>, Array1<f64>)>)> {
        let (b, d) = h.dim();
        if d != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "batch norm input",
                expected: self.dim(),
                found: d,
            });
        }
        let batch_stats = mode.uses_batch_stats();
        let (mean, var) = if batch_stats {
            if b < 2 {
                return Err(Error::BatchTooSmall(b));
            }
            (
                h.mean_axis(Axis(0)).expect("non-empty batch"),
                h.var_axis(Axis(0), 0.0),
            )
        } else {
            (
                Array1::from(self.running_mean.clone()),
                Array1::from(self.running_var.clone()),
            )
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut normalized = h.to_owned();
        for mut row in normalized.rows_mut() {
            for j in 0..d {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let mut out = normalized.clone();
        for mut row in out.rows_mut() {
            for j in 0..d {
                row[j] = self.gamma[j] * row[j] + self.beta[j];
            }
        }
        let stats = batch_stats.then_some((mean, var));
        Ok((
            out,
            BnCache {
                normalized,
                inv_std,
                batch_stats,
            },
            stats,
        ))
    }

    pub(crate) fn backward(&self, cache: &BnCache, dy: &Array2<f64>) -> (Array2<f64>, BnGrad) {
        let (b, d) = dy.dim();
        let xhat = &cache.normalized;
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for (dyr, xr) in dy.rows().into_iter().zip(xhat.rows()) {
            for j in 0..d {
                dgamma[j] += dyr[j] * xr[j];
                dbeta[j] += dyr[j];
            }
        }
        let mut dx = Array2::zeros((b, d));
        let nb = b as f64;
        for j in 0..d {
            let k = self.gamma[j] * cache.inv_std[j];
            if cache.batch_stats {
                for r in 0..b {
                    dx[[r, j]] = k / nb * (nb * dy[[r, j]] - dbeta[j] - xhat[[r, j]] * dgamma[j]);
                }
            } else {
                for r in 0..b {
                    dx[[r, j]] = k * dy[[r, j]];
                }
            }
        }
        (
            dx,
            BnGrad {
                gamma: dgamma,
                beta: dbeta,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_batch_normalizes_to_zero() {
        let mut bn = BatchNorm::new(2);
        let out = bn.apply(&Array2::from_elem((4, 2), 3.7)).unwrap();
        assert!(out.iter().all(|v| v.abs() <= 1e-3));
    }

    #[test]
    fn running_stats_are_affine() {
        let mut bn = BatchNorm::new(1);
        bn.gamma = vec![2.0];
        bn.beta = vec![3.0];
        bn.mode = BnMode::EvalRunningStats;
        let out = bn.apply(&array![[0.5]]).unwrap();
        assert!((out[[0, 0]] - (1.0 / (1.0 + 1e-5f64).sqrt() + 3.0)).abs() < 1e-15);
    }

    #[test]
    fn frozen_mode_keeps_buffers() {
        let mut bn = BatchNorm::new(2);
        bn.running_mean = vec![0.3, -0.2];
        let before = bn.clone();
        bn.apply(&array![[1.0, 2.0], [3.0, -1.0]]).unwrap();
        assert_eq!(bn, before);
    }

    #[test]
    fn single_sample_batch_is_rejected() {
        let mut bn = BatchNorm::new(2);
        assert!(matches!(
            bn.apply(&array![[1.0, 2.0]]),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn train_mode_updates_buffers() {
        let mut bn = BatchNorm::new(1);
        bn.mode = BnMode::TrainBatchStats;
        bn.apply(&array![[1.0], [3.0]]).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
    }
}
