//! Closed-form parameter counts for this architecture and dense baselines.

use super::Architecture;

/// Model families compared by parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Dense layers with biases.
    Mlp,
    /// One `G`-coefficient spline per edge.
    Kan,
    /// Dense weights plus four scalar nonlinearity parameters.
    GsKan,
    /// Same count as [`Baseline::GsKan`].
    SaKan,
    /// Shift-and-sum blocks with one-parameter inner and outer maps.
    Sprecher,
}

fn chain(d_in: usize, hidden: &[usize], d_out: usize) -> Vec<usize> {
    let mut dims = vec![d_in];
    dims.extend_from_slice(hidden);
    dims.push(d_out);
    dims
}

/// Parameter count of `kind` for `d_in -> hidden -> d_out`.
///
/// `knots` is the per-edge coefficient count for [`Baseline::Kan`] and is
/// ignored otherwise. The Sprecher count uses an explicit output block and
/// no mixing, residual or normalization, which is the configuration of the
/// width-scaling stress test.
pub fn baseline_param_count(
    kind: Baseline,
    d_in: usize,
    hidden: &[usize],
    d_out: usize,
    knots: usize,
) -> usize {
    let dims = chain(d_in, hidden, d_out);
    let dense: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let edges: usize = dims.windows(2).map(|w| w[0] * w[1]).sum();
    match kind {
        Baseline::Mlp => dense,
        Baseline::Kan => knots * edges,
        Baseline::GsKan | Baseline::SaKan => dense + 4,
        // λ (d_in), η, one inner and one outer parameter per block.
        Baseline::Sprecher => dims.windows(2).map(|w| w[0] + 3).sum(),
    }
}

/// Sprecher count for an [`Architecture`] with one-parameter maps.
pub fn sprecher_minimal_count(arch: &Architecture) -> usize {
    arch.block_dims().iter().map(|(d_in, _)| d_in + 3).sum()
}
