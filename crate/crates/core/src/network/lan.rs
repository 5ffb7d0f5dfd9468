use ndarray::{Array1, Array2};

use crate::block::{ForwardMode, SprecherBlock};
use crate::error::{Error, Result};

/// A block rewritten as two dense layers with shared activations.
///
/// Layer A copies the input once per output (`[I|…|I]ᵀ`), shifts copy `q` by
/// `η q` and applies the inner map. Layer B applies `λ` to each copy, adds
/// `α q` and applies the outer map.
#[derive(Debug, Clone)]
pub struct LanExpansion {
    /// `(d_out·d_in) × d_in`.
    pub weight_a: Array2<f64>,
    pub bias_a: Array1<f64>,
    /// `d_out × (d_out·d_in)`.
    pub weight_b: Array2<f64>,
    pub bias_b: Array1<f64>,
}

impl LanExpansion {
    /// Fails when the block has lateral mixing or a residual.
    pub fn from_block(block: &SprecherBlock) -> Result<Self> {
        if !block.mixing.is_none() || !block.residual.is_none() {
            return Err(Error::NotExpandable);
        }
        let (n, m) = (block.d_in, block.d_out);
        let mut weight_a = Array2::zeros((m * n, n));
        let mut bias_a = Array1::zeros(m * n);
        let mut weight_b = Array2::zeros((m, m * n));
        let mut bias_b = Array1::zeros(m);
        for q in 0..m {
            for i in 0..n {
                weight_a[[q * n + i, i]] = 1.0;
                bias_a[q * n + i] = block.eta * block.q_grid[q];
                weight_b[[q, q * n + i]] = block.lambda[i];
            }
            bias_b[q] = block.alpha * block.q_grid[q];
        }
        Ok(LanExpansion {
            weight_a,
            bias_a,
            weight_b,
            bias_b,
        })
    }

    /// Evaluates both layers with the block's maps as activations.
    pub fn forward(&self, block: &SprecherBlock, x: &Array2<f64>) -> Array2<f64> {
        let a = (x.dot(&self.weight_a.t()) + &self.bias_a).mapv(|v| block.phi.eval(v));
        (a.dot(&self.weight_b.t()) + &self.bias_b).mapv(|v| block.outer.eval(v))
    }
}

/// Largest absolute difference between the block and its two-layer
/// expansion over `probes`.
pub fn lan_expand_check(block: &SprecherBlock, probes: &Array2<f64>) -> Result<f64> {
    let lan = LanExpansion::from_block(block)?;
    let direct = block.forward(probes, ForwardMode::Parallel)?;
    let expanded = lan.forward(block, probes);
    Ok(direct
        .iter()
        .zip(&expanded)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}
