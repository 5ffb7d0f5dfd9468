//! Gradients, optimization and the training loop.

mod dd;
mod grad;
mod gradcheck;
mod loss;
mod optim;
mod reference;

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use grad::{backward, backward_with, update_bn_buffers, Backprop, GradientSet};
pub use gradcheck::{gradcheck, GradCheckEntry};
pub use loss::{accuracy, loss, loss_and_grad, LossKind, Targets};
pub use optim::{adam_step, clip_grad_norm, AdamState, LrSchedule};

use crate::block::{BnMode, ForwardMode};
use crate::domains::BoundsConfig;
use crate::error::{Error, Result};
use crate::network::SprecherNetwork;

/// Inputs with matching targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Targets,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Targets) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                what: "dataset rows",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(idx),
        }
    }
}

/// When spline domains are recomputed during training.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSchedule {
    EveryEpoch,
    /// Only during the first fraction of epochs.
    FirstFraction(f64),
    #[default]
    Never,
}

impl DomainSchedule {
    pub fn active(&self, epoch: usize, epochs: usize) -> bool {
        match *self {
            DomainSchedule::EveryEpoch => true,
            DomainSchedule::FirstFraction(f) => (epoch as f64) < (f * epochs as f64).ceil(),
            DomainSchedule::Never => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub domain_schedule: DomainSchedule,
    pub bounds: BoundsConfig,
    /// Resample outer splines when their domains move.
    pub resample_outer: bool,
    pub lr_schedule: LrSchedule,
    /// Shuffles minibatches.
    pub seed: u64,
    /// Evaluate on the full training set every this many epochs (0 = never).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 100,
            batch_size: 0,
            clip_norm: None,
            weight_decay: 0.0,
            loss: LossKind::Mse,
            domain_schedule: DomainSchedule::Never,
            bounds: BoundsConfig::default(),
            resample_outer: true,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if let DomainSchedule::FirstFraction(f) = self.domain_schedule {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config("domain fraction must be in (0, 1]".into()));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip norm must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss during the epoch.
    pub loss: f64,
    pub best_loss: f64,
    /// Loss on the full set in evaluation mode, when measured this epoch.
    pub eval_loss: Option<f64>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn initial_loss(&self) -> Option<f64> {
        self.epochs.first().map(|r| r.loss)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.best_loss)
    }

    /// Smallest evaluation-mode loss seen.
    pub fn best_eval(&self) -> Option<f64> {
        self.epochs
            .iter()
            .filter_map(|r| r.eval_loss)
            .reduce(f64::min)
    }

    /// CSV with columns `epoch,loss,best_loss,elapsed_s`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,best_loss,elapsed_s")?;
        for r in &self.epochs {
            writeln!(w, "{},{},{},{}", r.epoch, r.loss, r.best_loss, r.elapsed_s)?;
        }
        Ok(())
    }
}

/// Loss on `data` in evaluation mode (each layer's configured statistics).
pub fn evaluate(net: &SprecherNetwork, data: &Dataset, kind: LossKind) -> Result<f64> {
    let pred = net.forward(&data.x, ForwardMode::default())?;
    loss(kind, &pred, &data.y)
}

/// Trains `net` in place.
pub fn train_loop(net: &mut SprecherNetwork, data: &Dataset, cfg: &TrainConfig) -> Result<History> {
    train_loop_with(net, data, cfg, |_, _| {})
}

/// Like [`train_loop`], calling `on_epoch` after every epoch.
pub fn train_loop_with<F>(
    net: &mut SprecherNetwork,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<History>
where
    F: FnMut(&SprecherNetwork, &EpochRecord),
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let n = data.len();
    let bs = if cfg.batch_size == 0 {
        n
    } else {
        cfg.batch_size.min(n)
    };
    let full = bs == n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut state = AdamState::new(net.n_params());
    let bn = net.has_bn().then_some(BnMode::TrainBatchStats);
    let start = Instant::now();
    let mut best = f64::INFINITY;
    let mut history = History::default();

    for epoch in 0..cfg.epochs {
        if cfg.domain_schedule.active(epoch, cfg.epochs) {
            net.update_domains(&cfg.bounds, cfg.resample_outer)?;
        }
        let lr = cfg.lr_schedule.rate(cfg.lr, epoch, cfg.epochs);
        if !full {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let bp = if full {
                backward_with(net, &data.x, &data.y, cfg.loss, bn)?
            } else {
                let batch = data.select(chunk);
                backward_with(net, &batch.x, &batch.y, cfg.loss, bn)?
            };
            total += bp.loss * chunk.len() as f64;
            let mut g = bp.grads.flatten();
            if let Some(c) = cfg.clip_norm {
                clip_grad_norm(&mut g, c);
            }
            let mut p = net.params();
            adam_step(&mut p, &g, &mut state, lr, cfg.weight_decay);
            net.set_params(&p);
            update_bn_buffers(net, &bp.bn_stats);
        }
        let epoch_loss = total / n as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::NonFinite {
                what: format!("training loss at epoch {epoch}"),
            });
        }
        best = best.min(epoch_loss);
        let eval_loss = if cfg.eval_every > 0
            && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)
        {
            Some(evaluate(net, data, cfg.loss)?)
        } else {
            None
        };
        let rec = EpochRecord {
            epoch,
            loss: epoch_loss,
            best_loss: best,
            eval_loss,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(net, &rec);
        history.epochs.push(rec);
    }
    Ok(history)
}
