use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Architecture, BnPlacement, HeadInit, NetConfig, Nonlinearity, OutputMode};
use crate::block::{
    BatchNorm, BlockCache, BnCache, BnMode, ForwardMode, Mixing, Residual, SprecherBlock,
};
use crate::domains::{self, BoundsConfig, DomainReport};
use crate::error::{Error, Result};
use crate::splines::{GeneralSpline, InnerFn, Interval, KnotGrid, MonotoneSpline, OuterFn, Prelu};

/// Affine map `y ↦ scale · y + bias` applied to every output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Head {
    pub scale: f64,
    pub bias: f64,
}

/// A chain of blocks with optional normalization and output head.
#[derive(Debug, Clone, PartialEq)]
pub struct SprecherNetwork {
    pub arch: Architecture,
    pub blocks: Vec<SprecherBlock>,
    /// One slot per block; where a layer applies is set by `bn_placement`.
    pub norms: Vec<Option<BatchNorm>>,
    pub bn_placement: BnPlacement,
    pub head: Option<Head>,
}

/// Intermediate values of one block for a batch.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    /// Block input after any preceding normalization.
    pub input: Array2<f64>,
    /// Pre-activations after mixing.
    pub preact: Array2<f64>,
    /// Block output before any following normalization.
    pub output: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub bn_before: Option<BnCache>,
    pub block: BlockCache,
    pub bn_after: Option<BnCache>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub(crate) struct NetCache {
    pub layers: Vec<LayerCache>,
    /// Output before the head.
    pub pre_head: Array2<f64>,
    /// Batch statistics per normalization slot, for buffer updates.
    pub bn_stats: Vec<Option<(ndarray::Array1<f64>, ndarray::Array1<f64>)>>,
}

impl SprecherNetwork {
    /// Builds and initializes a network.
    ///
    /// Weights `λ` are drawn from `N(0, 2/d_in)`. Spline domains are set
    /// block by block from interval bounds of `[0, 1]^{d_in}`, with each outer
    /// spline starting as the identity on its domain. `target_mean` seeds the
    /// regression head bias.
    pub fn build(arch: &Architecture, cfg: &NetConfig, target_mean: f64) -> Result<Self> {
        cfg.validate()?;
        let mut arch = arch.clone();
        if cfg.output_block {
            arch = arch.force_output_block();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dims = arch.block_dims();
        let n_blocks = dims.len();
        let mut blocks = Vec::with_capacity(n_blocks);
        for &(d_in, d_out) in &dims {
            let (phi, outer) = match cfg.nonlinearity {
                Nonlinearity::Prelu => (
                    InnerFn::Prelu(Prelu::default()),
                    OuterFn::Prelu(Prelu::default()),
                ),
                Nonlinearity::Spline => (
                    InnerFn::Spline(MonotoneSpline::new(
                        KnotGrid::new(0.0, 1.0, cfg.phi_knots)?,
                        cfg.phi_kind,
                    )),
                    OuterFn::Spline(GeneralSpline::identity(
                        KnotGrid::new(0.0, 1.0, cfg.outer_knots)?,
                        cfg.outer_kind,
                    )),
                ),
            };
            let mut block = SprecherBlock::new(d_in, d_out, phi, outer);
            let normal = Normal::new(0.0, (2.0 / d_in as f64).sqrt()).expect("positive variance");
            block.lambda = (0..d_in).map(|_| normal.sample(&mut rng)).collect();
            block.eta = 1.0 / d_out as f64;
            block.alpha = cfg.alpha;
            block.q_grid = cfg.q_grid.grid(d_out);
            block.mixing = match cfg.mixing {
                crate::block::Topology::None => Mixing::none(),
                t => Mixing::uniform(t, d_out, cfg.tau_init, cfg.omega_init),
            };
            block.residual = Residual::build(cfg.residual, d_in, d_out, cfg.residual_init);
            block.validate()?;
            blocks.push(block);
        }

        let norms = (0..n_blocks)
            .map(|l| {
                let eligible = match cfg.bn {
                    BnPlacement::None => false,
                    BnPlacement::Before => !(cfg.bn_skip_first && l == 0),
                    BnPlacement::After => l + 1 < n_blocks && !(cfg.bn_skip_first && l == 0),
                };
                eligible.then(|| {
                    let d = match cfg.bn {
                        BnPlacement::Before => dims[l].0,
                        _ => dims[l].1,
                    };
                    let mut bn = BatchNorm::new(d);
                    bn.mode = cfg.bn_eval;
                    bn
                })
            })
            .collect();

        let head = match cfg.head {
            HeadInit::None => None,
            HeadInit::Regression => Some(Head {
                scale: 0.1,
                bias: target_mean,
            }),
            HeadInit::Unit => Some(Head {
                scale: 1.0,
                bias: 0.0,
            }),
        };

        let mut net = SprecherNetwork {
            arch,
            blocks,
            norms,
            bn_placement: cfg.bn,
            head,
        };
        net.init_domains(cfg.margin, cfg.codomain)?;
        Ok(net)
    }

    /// Sets every spline domain from bounds of the unit box, block by block,
    /// and re-initializes outer splines as identities on their domains.
    pub fn init_domains(&mut self, margin: f64, codomain: bool) -> Result<()> {
        let bounds = BoundsConfig {
            margin,
            ..BoundsConfig::default()
        };
        let mut current = vec![Interval::new(0.0, 1.0); self.arch.d_in];
        for l in 0..self.blocks.len() {
            if let (BnPlacement::Before, Some(bn)) = (self.bn_placement, &self.norms[l]) {
                current = domains::bn_bounds(bn, &current, bounds.bn_bound_mode).0;
            }
            let block = &mut self.blocks[l];
            let phi_dom = domains::phi_domain(&current, block.eta, &block.q_grid);
            if let InnerFn::Spline(s) = &mut block.phi {
                s.grid = s.grid.relocated(domains::spline_domain(phi_dom, margin))?;
            }
            let dom = domains::block_bounds(block, &current, true);
            if let OuterFn::Spline(s) = &mut block.outer {
                let grid = s
                    .grid
                    .relocated(domains::spline_domain(dom.outer_domain, margin))?;
                *s = if codomain {
                    GeneralSpline::identity_with_codomain(grid, s.kind)
                } else {
                    GeneralSpline::identity(grid, s.kind)
                };
            }
            let dom = domains::block_bounds(block, &current, true);
            current = dom.output;
            if let (BnPlacement::After, Some(bn)) = (self.bn_placement, &self.norms[l]) {
                current = domains::bn_bounds(bn, &current, bounds.bn_bound_mode).0;
            }
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.arch.d_in
    }

    pub fn d_out(&self) -> usize {
        self.arch.d_out
    }

    /// Sets the statistics mode of every normalization layer.
    pub fn set_bn_mode(&mut self, mode: BnMode) {
        for bn in self.norms.iter_mut().flatten() {
            bn.mode = mode;
        }
    }

    pub fn has_bn(&self) -> bool {
        self.norms.iter().any(|n| n.is_some())
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(|b| b.n_params()).sum::<usize>()
            + self
                .norms
                .iter()
                .flatten()
                .map(|n| n.n_params())
                .sum::<usize>()
            + if self.head.is_some() { 2 } else { 0 }
    }

    /// Flattened parameters: every block, then normalization `(γ, β)`, then
    /// head `(scale, bias)`.
    pub fn params(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.blocks.iter().flat_map(|b| b.params()).collect();
        for bn in self.norms.iter().flatten() {
            v.extend_from_slice(&bn.gamma);
            v.extend_from_slice(&bn.beta);
        }
        if let Some(h) = self.head {
            v.push(h.scale);
            v.push(h.bias);
        }
        v
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let mut at = 0;
        for b in &mut self.blocks {
            let n = b.n_params();
            b.set_params(&p[at..at + n]);
            at += n;
        }
        for bn in self.norms.iter_mut().flatten() {
            let d = bn.dim();
            bn.gamma.copy_from_slice(&p[at..at + d]);
            bn.beta.copy_from_slice(&p[at + d..at + 2 * d]);
            at += 2 * d;
        }
        if let Some(h) = self.head.as_mut() {
            h.scale = p[at];
            h.bias = p[at + 1];
        }
    }

    /// Evaluates the network. Normalization uses each layer's configured
    /// mode; running buffers are never written here.
    pub fn forward(&self, x: &Array2<f64>, mode: ForwardMode) -> Result<Array2<f64>> {
        self.forward_cached(x, mode, None).map(|(y, _)| y)
    }

    /// Forward pass keeping what the backward pass needs. `bn_override`
    /// replaces every layer's mode.
    pub(crate) fn forward_cached(
        &self,
        x: &Array2<f64>,
        mode: ForwardMode,
        bn_override: Option<BnMode>,
    ) -> Result<(Array2<f64>, NetCache)> {
        if x.ncols() != self.arch.d_in {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.arch.d_in,
                found: x.ncols(),
            });
        }
        let mut h = x.to_owned();
        let mut layers = Vec::with_capacity(self.blocks.len());
        let mut bn_stats = vec![None; self.blocks.len()];
        for (l, block) in self.blocks.iter().enumerate() {
            let mut bn_before = None;
            let mut bn_after = None;
            if let (BnPlacement::Before, Some(bn)) = (self.bn_placement, &self.norms[l]) {
                let (y, c, st) = bn.normalize(&h, bn_override.unwrap_or(bn.mode))?;
                h = y;
                bn_before = Some(c);
                bn_stats[l] = st;
            }
            let (y, cache) = block.forward_cached(&h, mode)?;
            h = y;
            if let (BnPlacement::After, Some(bn)) = (self.bn_placement, &self.norms[l]) {
                let (y, c, st) = bn.normalize(&h, bn_override.unwrap_or(bn.mode))?;
                h = y;
                bn_after = Some(c);
                bn_stats[l] = st;
            }
            layers.push(LayerCache {
                bn_before,
                block: cache,
                bn_after,
            });
        }
        if self.arch.output_mode == OutputMode::SummedScalar {
            h = h.sum_axis(Axis(1)).insert_axis(Axis(1));
        }
        let pre_head = h.clone();
        if let Some(hd) = self.head {
            h.mapv_inplace(|v| hd.scale * v + hd.bias);
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "network output".into(),
            });
        }
        Ok((
            h,
            NetCache {
                layers,
                pre_head,
                bn_stats,
            },
        ))
    }

    /// Per-block intermediate values for `x`.
    pub fn trace(&self, x: &Array2<f64>) -> Result<Vec<BlockTrace>> {
        let (_, cache) = self.forward_cached(x, ForwardMode::default(), None)?;
        Ok(cache
            .layers
            .into_iter()
            .zip(&self.blocks)
            .map(|(lc, b)| {
                let output = b
                    .forward(&lc.block.x, ForwardMode::default())
                    .expect("validated block");
                BlockTrace {
                    input: lc.block.x,
                    preact: lc.block.mixed,
                    output,
                }
            })
            .collect())
    }

    /// Interval bounds from the unit input box.
    pub fn domain_report(&self, config: &BoundsConfig) -> DomainReport {
        let unit = vec![Interval::new(0.0, 1.0); self.arch.d_in];
        domains::propagate(self, &unit, config)
    }

    /// Propagates bounds from the unit box and writes them into the splines.
    pub fn update_domains(
        &mut self,
        config: &BoundsConfig,
        resample_outer: bool,
    ) -> Result<DomainReport> {
        let report = self.domain_report(config);
        domains::apply_domains(self, &report, resample_outer)?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splines::SplineKind;
    use ndarray::array;

    fn identity_block() -> SprecherBlock {
        let mut b = SprecherBlock::new(
            1,
            1,
            InnerFn::Spline(MonotoneSpline::identity_ramp(
                KnotGrid::new(0.0, 1.0, 11).unwrap(),
                SplineKind::Pwl,
            )),
            OuterFn::Spline(GeneralSpline::identity(
                KnotGrid::new(0.0, 1.0, 5).unwrap(),
                SplineKind::Pwl,
            )),
        );
        b.lambda = vec![1.0];
        b.eta = 0.0;
        b.alpha = 0.0;
        b
    }

    fn identity_net(depth: usize) -> SprecherNetwork {
        SprecherNetwork {
            arch: Architecture::new(1, vec![1; depth], 1).unwrap(),
            blocks: vec![identity_block(); depth],
            norms: vec![None; depth],
            bn_placement: BnPlacement::None,
            head: None,
        }
    }

    #[test]
    fn composition_of_identities() {
        let net = identity_net(3);
        let y = net
            .forward(&array![[0.25], [0.8]], ForwardMode::default())
            .unwrap();
        assert!((y[[0, 0]] - 0.25).abs() < 1e-7 && (y[[1, 0]] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn zero_scale_head_is_constant() {
        let mut net = identity_net(2);
        net.head = Some(Head {
            scale: 0.0,
            bias: 4.5,
        });
        let y = net
            .forward(&array![[0.1], [0.9]], ForwardMode::default())
            .unwrap();
        assert_eq!(y, array![[4.5], [4.5]]);
    }

    #[test]
    fn summed_output_of_alpha_q_block() {
        let mut b = identity_block();
        b.d_out = 2;
        b.q_grid = vec![0.0, 1.0];
        b.lambda = vec![0.0];
        b.alpha = 1.0;
        let net = SprecherNetwork {
            arch: Architecture::new(1, vec![2], 1).unwrap(),
            blocks: vec![b],
            norms: vec![None],
            bn_placement: BnPlacement::None,
            head: None,
        };
        let y = net.forward(&array![[0.3]], ForwardMode::default()).unwrap();
        assert!((y[[0, 0]] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn build_counts_match_flat_vector() {
        let arch = Architecture::parse("3->[4,5]->2").unwrap();
        let cfg = NetConfig {
            mixing: crate::block::Topology::Cyclic,
            residual: crate::block::ResidualKind::Linear,
            bn: BnPlacement::After,
            codomain: true,
            head: HeadInit::Unit,
            ..NetConfig::default()
        };
        let net = SprecherNetwork::build(&arch, &cfg, 0.0).unwrap();
        assert_eq!(net.params().len(), net.n_params());
        let mut other = net.clone();
        other.set_params(&net.params());
        assert_eq!(other, net);
    }
}
