//! Width-doubling memory harness.

use anyhow::Result;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sprecher::block::QGridStyle;
use sprecher::network::{
    sprecher_minimal_count, Architecture, NetConfig, Nonlinearity, OutputMode, SprecherNetwork,
};
use sprecher::train::{adam_step, backward, AdamState, LossKind, Targets};

use crate::alloc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StressStatus {
    Ok,
    /// The step finished but its allocation high-water mark exceeded the
    /// budget.
    OverBudget,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressRecord {
    pub width: usize,
    pub params: usize,
    /// Peak bytes allocated during the step above the level before it;
    /// `None` when the counting allocator is not installed.
    pub peak_bytes: Option<usize>,
    pub status: StressStatus,
    pub seconds: f64,
}

/// The network measured by [`stress_step`]: `d_in -> [width; depth] -> 1`
/// with an output block and one-parameter maps.
pub fn stress_network(width: usize, depth: usize, d_in: usize) -> Result<SprecherNetwork> {
    let arch = Architecture::with_mode(d_in, vec![width; depth], 1, OutputMode::OutputBlock)?;
    let cfg = NetConfig {
        nonlinearity: Nonlinearity::Prelu,
        q_grid: QGridStyle::Symmetric,
        output_block: true,
        ..NetConfig::default()
    };
    Ok(SprecherNetwork::build(&arch, &cfg, 0.0)?)
}

/// Builds the stress network and runs one Adam step (forward, MSE,
/// backward, update) on a random batch. Every pass uses the sequential
/// schedule, so no `batch × width × width` tensor is formed.
pub fn stress_step(
    width: usize,
    depth: usize,
    batch: usize,
    d_in: usize,
    budget_bytes: usize,
) -> Result<StressRecord> {
    anyhow::ensure!(
        width >= 1 && depth >= 1 && batch >= 1 && d_in >= 1,
        "stress sizes must be positive"
    );
    let start = std::time::Instant::now();
    let base = alloc::reset_peak();
    let mut rng = ChaCha8Rng::seed_from_u64(width as u64);
    let x = Array2::from_shape_fn((batch, d_in), |_| rng.random::<f64>());
    let y = Array2::from_shape_fn((batch, 1), |_| rng.random::<f64>());
    let mut net = stress_network(width, depth, d_in)?;
    let bp = backward(&net, &x, &Targets::Values(y), LossKind::Mse)?;
    let mut p = net.params();
    let mut state = AdamState::new(p.len());
    adam_step(&mut p, &bp.grads.flatten(), &mut state, 1e-3, 0.0);
    net.set_params(&p);
    let peak_bytes = alloc::installed().then(|| alloc::peak().saturating_sub(base));
    let arch = Architecture::with_mode(d_in, vec![width; depth], 1, OutputMode::OutputBlock)?;
    debug_assert_eq!(net.n_params(), sprecher_minimal_count(&arch));
    let status = match peak_bytes {
        Some(b) if b > budget_bytes => StressStatus::OverBudget,
        _ => StressStatus::Ok,
    };
    Ok(StressRecord {
        width,
        params: net.n_params(),
        peak_bytes,
        status,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Doubles the width from `start` until a step exceeds the budget or
/// `max_width` is passed.
pub fn stress_loop(
    start: usize,
    max_width: usize,
    depth: usize,
    batch: usize,
    d_in: usize,
    budget_bytes: usize,
    mut report: impl FnMut(&StressRecord),
) -> Result<Vec<StressRecord>> {
    let mut out = Vec::new();
    let mut width = start.max(1);
    while width <= max_width {
        let rec = stress_step(width, depth, batch, d_in, budget_bytes)?;
        report(&rec);
        out.push(rec);
        if rec.status == StressStatus::OverBudget {
            break;
        }
        width *= 2;
    }
    Ok(out)
}
