use ndarray::Array2;

use super::fixed::{round_shift, saturate, Q16};
use crate::block::{BnMode, Residual, Topology};
use crate::error::{Error, Result};
use crate::network::{Architecture, BnPlacement, OutputMode, SprecherNetwork};
use crate::splines::{GeneralSpline, InnerFn, KnotGrid, MonotoneSpline, OuterFn, SplineKind};

/// Arithmetic the folded forward pass needs. Implemented for `f64` (the
/// reference path) and [`Q16`] (integer only).
pub trait Scalar: Copy + PartialOrd + std::fmt::Debug {
    const ZERO: Self;
    const ONE: Self;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    /// `Σ a_i b_i` with a single final rounding.
    fn dot(a: &[Self], b: &[Self]) -> Self;
    /// Segment index and local coordinate in `[0, 1]` of `x ≥ lo` on a grid
    /// with reciprocal step `inv_step`.
    fn locate(x: Self, lo: Self, inv_step: Self, count: usize) -> (usize, Self);
    fn to_f64(self) -> f64;
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
    const ONE: f64 = 1.0;
    fn add(self, o: f64) -> f64 {
        self + o
    }
    fn sub(self, o: f64) -> f64 {
        self - o
    }
    fn mul(self, o: f64) -> f64 {
        self * o
    }
    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    fn locate(x: f64, lo: f64, inv_step: f64, count: usize) -> (usize, f64) {
        let pos = (x - lo) * inv_step;
        let k = (pos.max(0.0) as usize).min(count - 2);
        (k, (pos - k as f64).clamp(0.0, 1.0))
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl Scalar for Q16 {
    const ZERO: Q16 = Q16::ZERO;
    const ONE: Q16 = Q16::ONE;
    fn add(self, o: Q16) -> Q16 {
        Q16(self.0.saturating_add(o.0))
    }
    fn sub(self, o: Q16) -> Q16 {
        Q16(self.0.saturating_sub(o.0))
    }
    fn mul(self, o: Q16) -> Q16 {
        Q16(saturate(round_shift(self.0 as i128 * o.0 as i128)))
    }
    fn dot(a: &[Q16], b: &[Q16]) -> Q16 {
        let acc: i128 = a
            .iter()
            .zip(b)
            .map(|(x, y)| x.0 as i128 * y.0 as i128)
            .sum();
        Q16(saturate(round_shift(acc)))
    }
    fn locate(x: Q16, lo: Q16, inv_step: Q16, count: usize) -> (usize, Q16) {
        // 32 fractional bits
        let pos = (x.0 as i64 - lo.0 as i64) * inv_step.0 as i64;
        let k = ((pos >> 32).max(0) as usize).min(count - 2);
        let t = round_shift((pos - ((k as i64) << 32)) as i128).clamp(0, 1 << 16);
        (k, Q16(t as i32))
    }
    fn to_f64(self) -> f64 {
        Q16::to_f64(self)
    }
}

/// Piecewise-linear map on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Pwl<S> {
    pub lo: S,
    pub hi: S,
    pub step: S,
    /// Reciprocal of the step; lookups use this rather than `step`.
    pub inv_step: S,
    pub y: Vec<S>,
}

impl<S: Scalar> Pwl<S> {
    /// Interpolates; `x` is clamped into the grid.
    #[inline]
    fn interp(&self, x: S) -> S {
        let (k, t) = S::locate(x, self.lo, self.inv_step, self.y.len());
        self.y[k].add(self.y[k + 1].sub(self.y[k]).mul(t))
    }

    /// Inner map: 0 below the grid, 1 above it.
    #[inline]
    pub fn eval_inner(&self, x: S) -> S {
        if x < self.lo {
            S::ZERO
        } else if x > self.hi {
            S::ONE
        } else {
            self.interp(x)
        }
    }

    /// Outer map with linear extrapolation by the given end slopes.
    #[inline]
    pub fn eval_outer(&self, x: S, left: S, right: S) -> S {
        if x < self.lo {
            self.y[0].add(left.mul(x.sub(self.lo)))
        } else if x > self.hi {
            self.y[self.y.len() - 1].add(right.mul(x.sub(self.hi)))
        } else {
            self.interp(x)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FoldedResidual<S> {
    None,
    Scalar(S),
    Broadcast(Vec<S>),
    Pool(Vec<S>),
    /// Row-major `d_in × d_out`.
    Linear(Vec<S>),
}

/// Per-channel affine map standing in for a normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<S> {
    pub scale: Vec<S>,
    pub shift: Vec<S>,
}

impl<S: Scalar> Affine<S> {
    fn apply(&self, h: &mut [S]) {
        for (j, v) in h.iter_mut().enumerate() {
            *v = v.mul(self.scale[j]).add(self.shift[j]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldedBlock<S> {
    pub d_in: usize,
    pub d_out: usize,
    pub lambda: Vec<S>,
    /// `η q` per output.
    pub shift: Vec<S>,
    /// `α q` per output.
    pub offset: Vec<S>,
    pub phi: Pwl<S>,
    pub outer: Pwl<S>,
    pub left_slope: S,
    pub right_slope: S,
    pub topology: Topology,
    /// `τ ω` weights on the next and previous neighbor.
    pub mix_next: Vec<S>,
    pub mix_prev: Vec<S>,
    pub residual: FoldedResidual<S>,
    pub norm_before: Option<Affine<S>>,
    pub norm_after: Option<Affine<S>>,
}

impl<S: Scalar> FoldedBlock<S> {
    /// One sample, evaluated output by output.
    pub fn forward(&self, x: &[S], shifted: &mut Vec<S>, out: &mut Vec<S>) {
        let (n, m) = (self.d_in, self.d_out);
        let mut s = vec![S::ZERO; m];
        shifted.resize(n, S::ZERO);
        for q in 0..m {
            for i in 0..n {
                shifted[i] = self.phi.eval_inner(x[i].add(self.shift[q]));
            }
            s[q] = S::dot(&self.lambda, shifted).add(self.offset[q]);
        }
        out.clear();
        for q in 0..m {
            let next = if q + 1 == m { 0 } else { q + 1 };
            let prev = if q == 0 { m - 1 } else { q - 1 };
            let mixed = match self.topology {
                Topology::None => s[q],
                Topology::Cyclic => s[q].add(self.mix_next[q].mul(s[next])),
                Topology::Bidirectional => s[q]
                    .add(self.mix_next[q].mul(s[next]))
                    .add(self.mix_prev[q].mul(s[prev])),
            };
            out.push(
                self.outer
                    .eval_outer(mixed, self.left_slope, self.right_slope),
            );
        }
        match &self.residual {
            FoldedResidual::None => {}
            FoldedResidual::Scalar(w) => (0..m).for_each(|q| out[q] = out[q].add(w.mul(x[q]))),
            FoldedResidual::Broadcast(w) => {
                (0..m).for_each(|q| out[q] = out[q].add(w[q].mul(x[q % n])))
            }
            FoldedResidual::Pool(w) => {
                (0..n).for_each(|i| out[i % m] = out[i % m].add(w[i].mul(x[i])))
            }
            FoldedResidual::Linear(w) => {
                for q in 0..m {
                    let mut acc = S::ZERO;
                    for i in 0..n {
                        acc = acc.add(x[i].mul(w[i * m + q]));
                    }
                    out[q] = out[q].add(acc);
                }
            }
        }
    }
}

/// A network reduced to piecewise-linear maps with normalization and
/// codomain maps folded into affine constants.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedModel<S> {
    pub arch: Architecture,
    pub blocks: Vec<FoldedBlock<S>>,
    pub head: Option<(S, S)>,
}

/// The integer-only model.
pub type QuantizedModel = FoldedModel<Q16>;

impl<S: Scalar> FoldedModel<S> {
    pub fn d_in(&self) -> usize {
        self.arch.d_in
    }

    /// Evaluates one sample.
    pub fn forward(&self, x: &[S]) -> Vec<S> {
        let mut h = x.to_vec();
        let mut out = Vec::new();
        let mut scratch = Vec::new();
        for b in &self.blocks {
            if let Some(a) = &b.norm_before {
                a.apply(&mut h);
            }
            b.forward(&h, &mut scratch, &mut out);
            std::mem::swap(&mut h, &mut out);
            if let Some(a) = &b.norm_after {
                a.apply(&mut h);
            }
        }
        if self.arch.output_mode == OutputMode::SummedScalar {
            h = vec![h.iter().fold(S::ZERO, |a, &v| a.add(v))];
        }
        if let Some((s, b)) = self.head {
            for v in h.iter_mut() {
                *v = v.mul(s).add(b);
            }
        }
        h
    }

    /// Applies `f(name, value)` to every constant.
    pub fn try_map<T, F>(&self, mut f: F) -> Result<FoldedModel<T>>
    where
        F: FnMut(&str, S) -> Result<T>,
    {
        let vec = |name: &str, v: &[S], f: &mut F| {
            v.iter().map(|&x| f(name, x)).collect::<Result<Vec<T>>>()
        };
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let pwl = |p: &Pwl<S>, name: &str, f: &mut F| -> Result<Pwl<T>> {
                Ok(Pwl {
                    lo: f(name, p.lo)?,
                    hi: f(name, p.hi)?,
                    step: f(name, p.step)?,
                    inv_step: f(name, p.inv_step)?,
                    y: p.y.iter().map(|&v| f(name, v)).collect::<Result<_>>()?,
                })
            };
            let affine = |a: &Option<Affine<S>>, f: &mut F| -> Result<Option<Affine<T>>> {
                a.as_ref()
                    .map(|a| {
                        Ok(Affine {
                            scale: a
                                .scale
                                .iter()
                                .map(|&v| f("norm scale", v))
                                .collect::<Result<_>>()?,
                            shift: a
                                .shift
                                .iter()
                                .map(|&v| f("norm shift", v))
                                .collect::<Result<_>>()?,
                        })
                    })
                    .transpose()
            };
            blocks.push(FoldedBlock {
                d_in: b.d_in,
                d_out: b.d_out,
                lambda: vec("lambda", &b.lambda, &mut f)?,
                shift: vec("eta q", &b.shift, &mut f)?,
                offset: vec("alpha q", &b.offset, &mut f)?,
                phi: pwl(&b.phi, "inner spline", &mut f)?,
                outer: pwl(&b.outer, "outer spline", &mut f)?,
                left_slope: f("outer slope", b.left_slope)?,
                right_slope: f("outer slope", b.right_slope)?,
                topology: b.topology,
                mix_next: vec("mixing", &b.mix_next, &mut f)?,
                mix_prev: vec("mixing", &b.mix_prev, &mut f)?,
                residual: match &b.residual {
                    FoldedResidual::None => FoldedResidual::None,
                    FoldedResidual::Scalar(w) => FoldedResidual::Scalar(f("residual", *w)?),
                    FoldedResidual::Broadcast(w) => {
                        FoldedResidual::Broadcast(vec("residual", w, &mut f)?)
                    }
                    FoldedResidual::Pool(w) => FoldedResidual::Pool(vec("residual", w, &mut f)?),
                    FoldedResidual::Linear(w) => {
                        FoldedResidual::Linear(vec("residual", w, &mut f)?)
                    }
                },
                norm_before: affine(&b.norm_before, &mut f)?,
                norm_after: affine(&b.norm_after, &mut f)?,
            });
        }
        let head = match self.head {
            Some((s, b)) => Some((f("head scale", s)?, f("head bias", b)?)),
            None => None,
        };
        Ok(FoldedModel {
            arch: self.arch.clone(),
            blocks,
            head,
        })
    }
}

impl FoldedModel<f64> {
    /// Batch evaluation.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = x
            .rows()
            .into_iter()
            .map(|r| self.forward(&r.to_vec()))
            .collect();
        to_array(rows)
    }
}

impl QuantizedModel {
    /// Converts each row to Q16, evaluates in integers and converts back.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = x
            .rows()
            .into_iter()
            .map(|r| {
                let q: Vec<Q16> = r.iter().map(|&v| Q16::from_f64(v)).collect();
                q_forward(self, &q).into_iter().map(Q16::to_f64).collect()
            })
            .collect();
        to_array(rows)
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> Array2<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), cols), |(r, c)| rows[r][c])
}

/// Integer-only forward pass of one sample.
pub fn q_forward(model: &QuantizedModel, x: &[Q16]) -> Vec<Q16> {
    model.forward(x)
}

/// Knot multiplier applied when a cubic spline is converted for the
/// integer path.
pub const PCHIP_REFINE: usize = 4;

fn pwl_grid(grid: KnotGrid, kind: SplineKind) -> Result<KnotGrid> {
    match kind {
        SplineKind::Pwl => Ok(grid),
        SplineKind::Pchip => KnotGrid::new(grid.lo, grid.hi, PCHIP_REFINE * (grid.count - 1) + 1),
    }
}

/// Grid of the folded table: the spline's own grid, refined for cubic
/// kinds, with `lo` and the reciprocal step passed through `snap` so the
/// table is sampled exactly where a lower-precision evaluator looks it up.
fn table_grid(grid: KnotGrid, kind: SplineKind, snap: fn(f64) -> f64) -> Result<(f64, f64, usize)> {
    let g = pwl_grid(grid, kind)?;
    let (lo, inv) = (snap(g.lo), snap(1.0 / g.step()));
    if inv <= 0.0 {
        return Err(Error::Config(format!(
            "knot step {} is beyond the table resolution",
            g.step()
        )));
    }
    Ok((lo, inv, g.count))
}

fn table(
    lo: f64,
    inv_step: f64,
    count: usize,
    snap: fn(f64) -> f64,
    f: impl Fn(f64) -> f64,
) -> Pwl<f64> {
    let step = 1.0 / inv_step;
    Pwl {
        lo,
        hi: snap(lo + (count - 1) as f64 * step),
        step: snap(step),
        inv_step,
        y: (0..count).map(|k| f(lo + k as f64 * step)).collect(),
    }
}

fn fold_inner(phi: &InnerFn, snap: fn(f64) -> f64) -> Result<Pwl<f64>> {
    match phi {
        InnerFn::Spline(s) => {
            let (lo, inv, count) = table_grid(s.grid, s.kind, snap)?;
            // The map jumps at its grid ends; sample only inside.
            let (glo, ghi) = (s.grid.lo, s.grid.hi);
            Ok(table(lo, inv, count, snap, |x| s.eval(x.clamp(glo, ghi))))
        }
        InnerFn::Prelu(_) => Err(Error::Config(
            "integer path supports spline maps only".into(),
        )),
    }
}

fn fold_outer(outer: &OuterFn, snap: fn(f64) -> f64) -> Result<(Pwl<f64>, f64, f64)> {
    match outer {
        OuterFn::Spline(s) => {
            let (lo, inv, count) = table_grid(s.grid, s.kind, snap)?;
            let t = table(lo, inv, count, snap, |x| s.eval(x));
            let left = s.deriv(s.grid.lo - 1.0);
            let right = s.deriv(s.grid.hi + 1.0);
            Ok((t, left, right))
        }
        OuterFn::Prelu(_) => Err(Error::Config(
            "integer path supports spline maps only".into(),
        )),
    }
}

/// Reduces `net` to piecewise-linear maps in `f64`.
///
/// Cubic splines are resampled onto a grid with [`PCHIP_REFINE`] times the
/// segments. Codomain maps are applied to the knot values and end slopes.
/// Normalization layers are folded from their running statistics, so the
/// result matches the network in [`BnMode::EvalRunningStats`].
pub fn fold(net: &SprecherNetwork) -> Result<FoldedModel<f64>> {
    fold_snapped(net, |v| v)
}

fn fold_snapped(net: &SprecherNetwork, snap: fn(f64) -> f64) -> Result<FoldedModel<f64>> {
    let mut blocks = Vec::with_capacity(net.blocks.len());
    for (l, b) in net.blocks.iter().enumerate() {
        let (outer, left_slope, right_slope) = fold_outer(&b.outer, snap)?;
        let m = b.d_out;
        let (mix_next, mix_prev) = match b.mixing.topology {
            Topology::None => (vec![], vec![]),
            Topology::Cyclic => (
                b.mixing.omega.iter().map(|w| b.mixing.tau * w).collect(),
                vec![],
            ),
            Topology::Bidirectional => (
                b.mixing.omega[..m]
                    .iter()
                    .map(|w| b.mixing.tau * w)
                    .collect(),
                b.mixing.omega[m..]
                    .iter()
                    .map(|w| b.mixing.tau * w)
                    .collect(),
            ),
        };
        let affine = net.norms[l].as_ref().map(|bn| {
            let (scale, shift) = bn.folded();
            Affine { scale, shift }
        });
        let (norm_before, norm_after) = match net.bn_placement {
            BnPlacement::Before => (affine, None),
            BnPlacement::After => (None, affine),
            BnPlacement::None => (None, None),
        };
        blocks.push(FoldedBlock {
            d_in: b.d_in,
            d_out: m,
            lambda: b.lambda.clone(),
            shift: b.q_grid.iter().map(|q| b.eta * q).collect(),
            offset: b.q_grid.iter().map(|q| b.alpha * q).collect(),
            phi: fold_inner(&b.phi, snap)?,
            outer,
            left_slope,
            right_slope,
            topology: b.mixing.topology,
            mix_next,
            mix_prev,
            residual: match &b.residual {
                Residual::None => FoldedResidual::None,
                Residual::Scalar(w) => FoldedResidual::Scalar(*w),
                Residual::Broadcast(w) => FoldedResidual::Broadcast(w.clone()),
                Residual::Pool(w) => FoldedResidual::Pool(w.clone()),
                Residual::Linear(w) => FoldedResidual::Linear(w.iter().copied().collect()),
            },
            norm_before,
            norm_after,
        });
    }
    Ok(FoldedModel {
        arch: net.arch.clone(),
        blocks,
        head: net.head.map(|h| (h.scale, h.bias)),
    })
}

/// Folds `net` and converts every constant to Q16. Table grids are rounded
/// to Q16 before sampling, so knot values sit at the positions the integer
/// lookup uses.
pub fn quantize_model(net: &SprecherNetwork) -> Result<QuantizedModel> {
    fold_snapped(net, |v| Q16::from_f64(v).to_f64())?.try_map(|name, v| Q16::try_from_f64(v, name))
}

/// A copy of `net` whose normalization layers use running statistics: the
/// float counterpart of the folded model.
pub fn with_running_stats(net: &SprecherNetwork) -> SprecherNetwork {
    let mut n = net.clone();
    n.set_bn_mode(BnMode::EvalRunningStats);
    n
}

/// Identity-like single block used by tests and examples.
#[doc(hidden)]
pub fn identity_network() -> SprecherNetwork {
    let mut b = crate::block::SprecherBlock::new(
        1,
        1,
        InnerFn::Spline(MonotoneSpline::identity_ramp(
            KnotGrid::new(0.0, 1.0, 11).expect("valid grid"),
            SplineKind::Pwl,
        )),
        OuterFn::Spline(GeneralSpline::identity(
            KnotGrid::new(0.0, 1.0, 5).expect("valid grid"),
            SplineKind::Pwl,
        )),
    );
    b.eta = 0.0;
    b.alpha = 0.0;
    b.lambda = vec![1.0];
    SprecherNetwork {
        arch: Architecture::new(1, vec![1], 1).expect("valid architecture"),
        blocks: vec![b],
        norms: vec![None],
        bn_placement: BnPlacement::None,
        head: None,
    }
}
