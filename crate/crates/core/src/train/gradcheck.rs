use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dd::{Dd, Real};
use super::grad::backward_with;
use super::loss::{LossKind, Targets};
use super::reference;
use crate::block::BnMode;
use crate::error::Result;
use crate::network::SprecherNetwork;

/// One compared coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic − numeric| / max(1e-8, |numeric|)`.
    pub rel_error: f64,
}

/// Compares analytic gradients with central differences of step `h` on up
/// to `samples` parameter coordinates chosen by `seed` (all when `samples`
/// covers them).
///
/// The differences are taken on a double-double evaluation of the network:
/// in plain f64 the cancellation noise at `h = 1e-6` is around `1e-10`,
/// which swamps small gradients.
pub fn gradcheck(
    net: &SprecherNetwork,
    x: &Array2<f64>,
    targets: &Targets,
    kind: LossKind,
    h: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<GradCheckEntry>> {
    let batch_stats = net.has_bn();
    let bn = batch_stats.then_some(BnMode::TrainBatchStats);
    let analytic = backward_with(net, x, targets, kind, bn)?.grads.flatten();
    let base: Vec<Dd> = net.params().iter().map(|&v| Dd::of(v)).collect();
    let mut idx = if samples >= base.len() {
        (0..base.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, base.len(), samples).into_vec()
    };
    idx.sort_unstable();
    let eval = |p: &[Dd]| {
        let out = reference::forward(net, p, x, batch_stats);
        match (kind, targets) {
            (LossKind::Mse, Targets::Values(y)) => reference::mse(&out, y),
            (_, Targets::Labels(l)) => reference::cross_entropy(&out, l),
            (LossKind::CrossEntropy, Targets::Values(_)) => unreachable!("rejected by backward"),
        }
    };
    let two_h = Dd::of(2.0 * h);
    Ok(idx
        .into_iter()
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + Dd::of(h);
            let up = eval(&p);
            p[i] = base[i] - Dd::of(h);
            let down = eval(&p);
            let numeric = ((up - down) / two_h).to_f64();
            GradCheckEntry {
                index: i,
                analytic: analytic[i],
                numeric,
                rel_error: (analytic[i] - numeric).abs() / numeric.abs().max(1e-8),
            }
        })
        .collect())
}
