//! Interval bound propagation, spline domain updates and Lipschitz bounds.
//!
//! Given an input box, [`propagate`] computes for every block the interval
//! its inner spline is evaluated on, bounds for each pre-activation, the
//! interval its outer spline is evaluated on, and bounds on its outputs. In
//! the absence of batch-statistics normalization every bound is sound.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::block::{BatchNorm, Mixing, Residual, SprecherBlock, Topology};
use crate::error::Result;
use crate::network::{BnPlacement, OutputMode, SprecherNetwork};
use crate::splines::{InnerFn, Interval, OuterFn};

/// Smallest width a spline domain is given when its bounds collapse.
pub const MIN_DOMAIN_WIDTH: f64 = 1e-6;

/// How normalization layers are bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnBoundMode {
    /// Batch statistics are unknown ahead of time; outputs are assumed to
    /// lie in the affine image of `[-4, 4]`. Not sound.
    #[default]
    BatchHeuristic,
    /// Exact affine image under the running statistics.
    RunningStats,
}

/// Options for [`propagate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsConfig {
    /// Relative widening applied when domains are written to splines.
    pub margin: f64,
    /// Track one interval per input coordinate instead of a shared hull.
    pub per_dimension: bool,
    pub bn_bound_mode: BnBoundMode,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            margin: 0.10,
            per_dimension: true,
            bn_bound_mode: BnBoundMode::BatchHeuristic,
        }
    }
}

/// Input bounds for one block.
#[derive(Debug, Clone, Copy)]
pub enum InputBounds<'a> {
    Shared(Interval),
    PerDimension(&'a [Interval]),
}

/// Bounds for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDomains {
    /// Box entering the block (after any preceding normalization).
    pub input: Vec<Interval>,
    /// Interval the inner map is evaluated on.
    pub phi_domain: Interval,
    /// Pre-activation bounds after lateral mixing.
    pub preact: Vec<Interval>,
    /// Interval the outer map is evaluated on: the hull of `preact`.
    pub outer_domain: Interval,
    /// Block outputs including the residual, before any following
    /// normalization.
    pub output: Vec<Interval>,
    /// Box handed to the next block.
    pub next_input: Vec<Interval>,
    /// Set when a normalization layer touching this block was bounded
    /// heuristically.
    pub heuristic: bool,
}

/// Result of [`propagate`].
#[derive(Debug, Clone, PartialEq)]
pub struct DomainReport {
    pub blocks: Vec<BlockDomains>,
    /// Network output bounds (after summation and head).
    pub network_output: Vec<Interval>,
    pub margin: f64,
}

impl DomainReport {
    /// Whether any bound relies on the normalization heuristic.
    pub fn heuristic(&self) -> bool {
        self.blocks.iter().any(|b| b.heuristic)
    }

    /// Inner-map domain of block `l` as written to the spline.
    pub fn phi_domain_margined(&self, l: usize) -> Interval {
        spline_domain(self.blocks[l].phi_domain, self.margin)
    }

    /// Outer-map domain of block `l` as written to the spline.
    pub fn outer_domain_margined(&self, l: usize) -> Interval {
        spline_domain(self.blocks[l].outer_domain, self.margin)
    }
}

impl fmt::Display for DomainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "margin {}", self.margin)?;
        for (l, b) in self.blocks.iter().enumerate() {
            let flag = if b.heuristic { " (heuristic)" } else { "" };
            writeln!(f, "block {l}{flag}")?;
            writeln!(
                f,
                "  phi domain    {}  -> spline {}",
                b.phi_domain,
                self.phi_domain_margined(l)
            )?;
            writeln!(
                f,
                "  outer domain  {}  -> spline {}",
                b.outer_domain,
                self.outer_domain_margined(l)
            )?;
            for (q, (p, o)) in b.preact.iter().zip(&b.output).enumerate() {
                writeln!(f, "  q={q:<4} preact {p}  output {o}")?;
            }
        }
        let outs: Vec<String> = self.network_output.iter().map(|i| i.to_string()).collect();
        writeln!(f, "network output {}", outs.join(" "))
    }
}

/// Widens by the margin and enforces a minimum width.
pub(crate) fn spline_domain(iv: Interval, margin: f64) -> Interval {
    let w = iv.widen(margin);
    if w.width() < MIN_DOMAIN_WIDTH {
        let m = w.mid();
        Interval::new(m - 0.5 * MIN_DOMAIN_WIDTH, m + 0.5 * MIN_DOMAIN_WIDTH)
    } else {
        w
    }
}

fn hull_all(ivs: &[Interval]) -> Interval {
    ivs.iter().skip(1).fold(ivs[0], |acc, iv| acc.hull(iv))
}

/// Interval the inner map sees for inputs in `input` and shifts `η q`.
pub fn phi_domain(input: &[Interval], eta: f64, q_grid: &[f64]) -> Interval {
    let a = input.iter().map(|i| i.lo).fold(f64::INFINITY, f64::min);
    let b = input.iter().map(|i| i.hi).fold(f64::NEG_INFINITY, f64::max);
    let q_min = q_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let q_max = q_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if eta >= 0.0 {
        Interval::new(a + eta * q_min, b + eta * q_max)
    } else {
        Interval::new(a + eta * q_max, b + eta * q_min)
    }
}

/// Sign-aware bounds after lateral mixing.
pub fn mix_bounds(mixing: &Mixing, s: &[Interval]) -> Vec<Interval> {
    let d = s.len();
    let contrib = |w: f64, iv: &Interval| -> Interval {
        if w >= 0.0 {
            Interval::new(w * iv.lo, w * iv.hi)
        } else {
            Interval::new(w * iv.hi, w * iv.lo)
        }
    };
    (0..d)
        .map(|q| {
            let next = (q + 1) % d;
            let prev = (q + d - 1) % d;
            match mixing.topology {
                Topology::None => s[q],
                Topology::Cyclic => s[q].add(&contrib(mixing.tau * mixing.omega[q], &s[next])),
                Topology::Bidirectional => s[q]
                    .add(&contrib(mixing.tau * mixing.omega[q], &s[next]))
                    .add(&contrib(mixing.tau * mixing.omega[d + q], &s[prev])),
            }
        })
        .collect()
}

/// Pre-activation bounds (after mixing) using exact inner-map ranges.
pub fn preact_bounds(block: &SprecherBlock, input: InputBounds<'_>) -> Vec<Interval> {
    let phi = block.phi.prepare();
    let shared;
    let boxes: &[Interval] = match input {
        InputBounds::PerDimension(b) => b,
        InputBounds::Shared(iv) => {
            shared = vec![iv; block.d_in];
            &shared
        }
    };
    let s: Vec<Interval> = (0..block.d_out)
        .map(|q| {
            let shift = block.eta * block.q_grid[q];
            let mut lo = 0.0;
            let mut hi = 0.0;
            for (lam, iv) in block.lambda.iter().zip(boxes) {
                let r = phi.range(iv.lo + shift, iv.hi + shift);
                if *lam >= 0.0 {
                    lo += lam * r.lo;
                    hi += lam * r.hi;
                } else {
                    lo += lam * r.hi;
                    hi += lam * r.lo;
                }
            }
            let aq = block.alpha * block.q_grid[q];
            Interval::new(lo + aq, hi + aq)
        })
        .collect();
    mix_bounds(&block.mixing, &s)
}

/// Pre-activation bounds that only use `0 ≤ φ ≤ 1`.
pub fn preact_bounds_coarse(block: &SprecherBlock) -> Vec<Interval> {
    let pos: f64 = block.lambda.iter().filter(|l| **l >= 0.0).sum();
    let neg: f64 = block.lambda.iter().filter(|l| **l < 0.0).sum();
    let s: Vec<Interval> = block
        .q_grid
        .iter()
        .map(|q| Interval::new(neg + block.alpha * q, pos + block.alpha * q))
        .collect();
    mix_bounds(&block.mixing, &s)
}

/// Bounds on each residual output coordinate.
pub fn residual_bounds(residual: &Residual, input: &[Interval], d_out: usize) -> Vec<Interval> {
    let d_in = input.len();
    match residual {
        Residual::None => vec![Interval::point(0.0); d_out],
        Residual::Scalar(w) => input.iter().map(|iv| iv.scale(*w)).collect(),
        Residual::Broadcast(w) => (0..d_out).map(|q| input[q % d_in].scale(w[q])).collect(),
        Residual::Pool(w) => {
            let mut out = vec![Interval::point(0.0); d_out];
            for i in 0..d_in {
                out[i % d_out] = out[i % d_out].add(&input[i].scale(w[i]));
            }
            out
        }
        Residual::Linear(w) => (0..d_out)
            .map(|q| {
                let (mut lo, mut hi) = (0.0, 0.0);
                for i in 0..d_in {
                    let wiq = w[[i, q]];
                    if wiq >= 0.0 {
                        lo += wiq * input[i].lo;
                        hi += wiq * input[i].hi;
                    } else {
                        lo += wiq * input[i].hi;
                        hi += wiq * input[i].lo;
                    }
                }
                Interval::new(lo, hi)
            })
            .collect(),
    }
}

/// Bounds after a normalization layer. Returns whether they are heuristic.
pub fn bn_bounds(bn: &BatchNorm, input: &[Interval], mode: BnBoundMode) -> (Vec<Interval>, bool) {
    match mode {
        BnBoundMode::BatchHeuristic => (
            (0..bn.dim())
                .map(|j| {
                    Interval::new(-4.0, 4.0)
                        .scale(bn.gamma[j])
                        .shift(bn.beta[j])
                })
                .collect(),
            true,
        ),
        BnBoundMode::RunningStats => {
            let (scale, shift) = bn.folded();
            (
                input
                    .iter()
                    .enumerate()
                    .map(|(j, iv)| iv.scale(scale[j]).shift(shift[j]))
                    .collect(),
                false,
            )
        }
    }
}

/// Bounds for a single block given its input box.
pub fn block_bounds(
    block: &SprecherBlock,
    input: &[Interval],
    per_dimension: bool,
) -> BlockDomains {
    let phi_dom = phi_domain(input, block.eta, &block.q_grid);
    let preact = if per_dimension {
        preact_bounds(block, InputBounds::PerDimension(input))
    } else {
        preact_bounds(block, InputBounds::Shared(hull_all(input)))
    };
    let outer_domain = hull_all(&preact);
    let outer = block.outer.prepare();
    let res = residual_bounds(&block.residual, input, block.d_out);
    let output: Vec<Interval> = preact
        .iter()
        .zip(&res)
        .map(|(p, r)| outer.range(p.lo, p.hi).add(r))
        .collect();
    BlockDomains {
        input: input.to_vec(),
        phi_domain: phi_dom,
        preact,
        outer_domain,
        next_input: output.clone(),
        output,
        heuristic: false,
    }
}

/// Propagates `input_box` through the network.
pub fn propagate(
    net: &SprecherNetwork,
    input_box: &[Interval],
    config: &BoundsConfig,
) -> DomainReport {
    let mut current = input_box.to_vec();
    let mut blocks = Vec::with_capacity(net.blocks.len());
    for (l, block) in net.blocks.iter().enumerate() {
        let mut heuristic = false;
        if let (BnPlacement::Before, Some(bn)) = (net.bn_placement, &net.norms[l]) {
            let (b, h) = bn_bounds(bn, &current, config.bn_bound_mode);
            current = b;
            heuristic |= h;
        }
        let mut dom = block_bounds(block, &current, config.per_dimension);
        if let (BnPlacement::After, Some(bn)) = (net.bn_placement, &net.norms[l]) {
            let (b, h) = bn_bounds(bn, &dom.output, config.bn_bound_mode);
            dom.next_input = b;
            heuristic |= h;
        }
        dom.heuristic = heuristic;
        current = dom.next_input.clone();
        blocks.push(dom);
    }
    let mut out = current;
    if net.arch.output_mode == OutputMode::SummedScalar {
        let total = out.iter().skip(1).fold(out[0], |acc, iv| acc.add(iv));
        out = vec![total];
    }
    if let Some(h) = net.head {
        out = out
            .iter()
            .map(|iv| iv.scale(h.scale).shift(h.bias))
            .collect();
    }
    DomainReport {
        blocks,
        network_output: out,
        margin: config.margin,
    }
}

/// Writes the report's margined domains into the splines.
///
/// Inner grids are relocated (values kept). Outer splines are resampled onto
/// their new grids when `resample_outer` is set and relocated otherwise.
pub fn apply_domains(
    net: &mut SprecherNetwork,
    report: &DomainReport,
    resample_outer: bool,
) -> Result<()> {
    for (l, block) in net.blocks.iter_mut().enumerate() {
        apply_block_domains(
            block,
            report.phi_domain_margined(l),
            report.outer_domain_margined(l),
            resample_outer,
        )?;
    }
    Ok(())
}

pub(crate) fn apply_block_domains(
    block: &mut SprecherBlock,
    phi_dom: Interval,
    outer_dom: Interval,
    resample_outer: bool,
) -> Result<()> {
    if let InnerFn::Spline(s) = &mut block.phi {
        s.grid = s.grid.relocated(phi_dom)?;
    }
    if let OuterFn::Spline(s) = &mut block.outer {
        let grid = s.grid.relocated(outer_dom)?;
        if resample_outer {
            *s = s.resample(grid);
        } else {
            s.grid = grid;
        }
    }
    Ok(())
}

/// Per-block constants of the Lipschitz bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub lambda_l1: f64,
    pub l_phi: f64,
    pub l_outer: f64,
    pub b_omega: f64,
    pub r_mix: f64,
    pub l_res: f64,
    /// `l_outer · r_mix · lambda_l1 · l_phi + l_res`.
    pub l_t: f64,
}

impl BoundConstants {
    pub fn from_parts(
        lambda_l1: f64,
        l_phi: f64,
        l_outer: f64,
        tau: f64,
        b_omega: f64,
        l_res: f64,
    ) -> Self {
        let r_mix = 1.0 + tau.abs() * b_omega;
        BoundConstants {
            lambda_l1,
            l_phi,
            l_outer,
            b_omega,
            r_mix,
            l_res,
            l_t: l_outer * r_mix * lambda_l1 * l_phi + l_res,
        }
    }

    /// Sup-norm error of one block from spline approximation, given
    /// curvature bounds `m_phi2`, `m_outer2` and knot spacings.
    pub fn spline_error(&self, m_phi2: f64, h_phi: f64, m_outer2: f64, h_outer: f64) -> f64 {
        let delta_phi = m_phi2 * h_phi * h_phi / 8.0;
        let delta_outer = m_outer2 * h_outer * h_outer / 8.0;
        self.l_outer * self.r_mix * self.lambda_l1 * delta_phi + delta_outer
    }
}

/// Lipschitz constants of one block (sup norm) on its reported domains.
pub fn block_constants(block: &SprecherBlock, dom: &BlockDomains) -> BoundConstants {
    let lambda_l1 = block.lambda.iter().map(|l| l.abs()).sum();
    let l_phi = block.phi.lipschitz_on(dom.phi_domain);
    let l_outer = block.outer.lipschitz_on(dom.outer_domain);
    let tau = if block.mixing.is_none() {
        0.0
    } else {
        block.mixing.tau
    };
    BoundConstants::from_parts(
        lambda_l1,
        l_phi,
        l_outer,
        tau,
        block.mixing.omega_row_bound(block.d_out),
        block.residual.inf_norm(block.d_out),
    )
}

/// `Σ_j (Π_{m>j} L_m) ε_j`.
pub fn compose_error(l_t: &[f64], eps: &[f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..eps.len() {
        let tail: f64 = l_t[j + 1..].iter().product();
        total += tail * eps[j];
    }
    total
}

/// Per-block constants and the composed error bound for per-block errors
/// `eps`.
pub fn lipschitz_compose_bound(
    net: &SprecherNetwork,
    report: &DomainReport,
    eps: &[f64],
) -> (Vec<BoundConstants>, f64) {
    let consts: Vec<BoundConstants> = net
        .blocks
        .iter()
        .zip(&report.blocks)
        .map(|(b, d)| block_constants(b, d))
        .collect();
    let l_t: Vec<f64> = consts.iter().map(|c| c.l_t).collect();
    let total = compose_error(&l_t, eps);
    (consts, total)
}
