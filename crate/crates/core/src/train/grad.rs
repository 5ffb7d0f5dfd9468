use ndarray::{Array1, Array2, Axis};

use super::loss::{loss_and_grad, LossKind, Targets};
use crate::block::{BlockGrad, BnGrad, BnMode, ForwardMode};
use crate::error::{Error, Result};
use crate::network::{BnPlacement, NetCache, OutputMode, SprecherNetwork};

/// Gradient for every trainable parameter, grouped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub blocks: Vec<BlockGrad>,
    /// One slot per block, present where a normalization layer exists.
    pub norms: Vec<Option<BnGrad>>,
    /// `(d scale, d bias)` of the head.
    pub head: Option<(f64, f64)>,
}

impl GradientSet {
    /// Same order as [`SprecherNetwork::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.blocks.iter().flat_map(|b| b.flatten()).collect();
        for g in self.norms.iter().flatten() {
            v.extend_from_slice(&g.gamma);
            v.extend_from_slice(&g.beta);
        }
        if let Some((s, b)) = self.head {
            v.push(s);
            v.push(b);
        }
        v
    }
}

/// Result of one forward and backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub loss: f64,
    pub grads: GradientSet,
    /// Batch mean and variance per normalization slot when batch statistics
    /// were used; feed to the running buffers after the step.
    pub bn_stats: Vec<Option<(Array1<f64>, Array1<f64>)>>,
}

/// Loss and exact gradients with normalization in training mode.
pub fn backward(
    net: &SprecherNetwork,
    x: &Array2<f64>,
    targets: &Targets,
    kind: LossKind,
) -> Result<Backprop> {
    backward_with(net, x, targets, kind, Some(BnMode::TrainBatchStats))
}

/// Like [`backward`], with `bn` overriding every normalization mode
/// (`None` keeps each layer's own).
pub fn backward_with(
    net: &SprecherNetwork,
    x: &Array2<f64>,
    targets: &Targets,
    kind: LossKind,
    bn: Option<BnMode>,
) -> Result<Backprop> {
    let (pred, cache) = net.forward_cached(x, ForwardMode::default(), bn)?;
    let (loss, dy) = loss_and_grad(kind, &pred, targets)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss".into(),
        });
    }
    let NetCache {
        layers,
        pre_head,
        bn_stats,
    } = cache;

    let (mut dh, head) = match net.head {
        Some(h) => {
            let ds = (&dy * &pre_head).sum();
            let db = dy.sum();
            (dy.mapv(|v| v * h.scale), Some((ds, db)))
        }
        None => (dy, None),
    };
    if net.arch.output_mode == OutputMode::SummedScalar {
        let d_last = net.blocks.last().expect("non-empty network").d_out;
        let col = dh.index_axis(Axis(1), 0).to_owned();
        dh = Array2::from_shape_fn((col.len(), d_last), |(r, _)| col[r]);
    }

    let n = net.blocks.len();
    let mut blocks = Vec::with_capacity(n);
    let mut norms = vec![None; n];
    for (l, lc) in layers.iter().enumerate().rev() {
        if let (BnPlacement::After, Some(bn), Some(c)) =
            (net.bn_placement, &net.norms[l], &lc.bn_after)
        {
            let (d, g) = bn.backward(c, &dh);
            dh = d;
            norms[l] = Some(g);
        }
        let (d, g) = net.blocks[l].backward(&lc.block, &dh);
        dh = d;
        blocks.push(g);
        if let (BnPlacement::Before, Some(bn), Some(c)) =
            (net.bn_placement, &net.norms[l], &lc.bn_before)
        {
            let (d, g) = bn.backward(c, &dh);
            dh = d;
            norms[l] = Some(g);
        }
    }
    blocks.reverse();
    Ok(Backprop {
        loss,
        grads: GradientSet {
            blocks,
            norms,
            head,
        },
        bn_stats,
    })
}

/// Writes batch statistics into the running buffers.
pub fn update_bn_buffers(net: &mut SprecherNetwork, stats: &[Option<(Array1<f64>, Array1<f64>)>]) {
    for (bn, st) in net.norms.iter_mut().zip(stats) {
        if let (Some(bn), Some((m, v))) = (bn, st) {
            bn.update_running(m, v);
        }
    }
}
