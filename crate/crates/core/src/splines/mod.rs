//! Learnable univariate maps.
//!
//! The inner map of a block is a monotone spline with codomain `[0, 1]`; the
//! outer map is a general spline with linear extrapolation. Both can be
//! replaced by a one-parameter PReLU, which is the configuration used by the
//! width stress test.

mod general;
pub(crate) mod interp;
mod monotone;
mod prelu;

pub use general::{Codomain, GeneralSpline, CODOMAIN_EPS};
pub use monotone::{MonotoneSpline, MONOTONE_EPS};
pub use prelu::Prelu;

pub(crate) use general::GeneralEval;
pub(crate) use monotone::MonotoneEval;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan(), "[{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    /// Smallest interval holding both endpoints, in either order.
    pub fn spanning(a: f64, b: f64) -> Self {
        Interval {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub fn contains_interval(&self, other: &Interval, tol: f64) -> bool {
        other.lo >= self.lo - tol && other.hi <= self.hi + tol
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Interval sum.
    pub fn add(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo + other.lo,
            hi: self.hi + other.hi,
        }
    }

    /// Image under multiplication by a scalar.
    pub fn scale(&self, w: f64) -> Interval {
        Interval::spanning(w * self.lo, w * self.hi)
    }

    pub fn shift(&self, c: f64) -> Interval {
        Interval {
            lo: self.lo + c,
            hi: self.hi + c,
        }
    }

    /// Widens each side by `margin * width / 2`.
    pub fn widen(&self, margin: f64) -> Interval {
        let pad = margin * self.width() * 0.5;
        Interval {
            lo: self.lo - pad,
            hi: self.hi + pad,
        }
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{:.6}, {:.6}]", self.lo, self.hi)
    }
}

/// Uniform knot grid on `[lo, hi]` with `count` knots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnotGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl KnotGrid {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || count < 2 {
            return Err(Error::InvalidGrid { lo, hi, count });
        }
        Ok(KnotGrid { lo, hi, count })
    }

    pub fn from_interval(iv: Interval, count: usize) -> Result<Self> {
        Self::new(iv.lo, iv.hi, count)
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    pub fn knot(&self, k: usize) -> f64 {
        if k + 1 == self.count {
            self.hi
        } else {
            self.lo + k as f64 * self.step()
        }
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.knot(k)).collect()
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.lo, self.hi)
    }

    /// Same knot count on a different domain.
    pub fn relocated(&self, domain: Interval) -> Result<Self> {
        Self::new(domain.lo, domain.hi, self.count)
    }
}

/// Interpolation scheme between knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplineKind {
    /// Piecewise linear.
    #[default]
    Pwl,
    /// Shape-preserving piecewise cubic Hermite.
    Pchip,
}

/// Inner map of a block.
#[derive(Debug, Clone, PartialEq)]
pub enum InnerFn {
    Spline(MonotoneSpline),
    Prelu(Prelu),
}

/// Outer map of a block.
#[derive(Debug, Clone, PartialEq)]
pub enum OuterFn {
    Spline(GeneralSpline),
    Prelu(Prelu),
}

/// Gradient accumulator for one univariate map.
///
/// `dy` holds gradients for knot ordinates (or the PReLU slope), `dd` for
/// PCHIP knot slopes, and `dcodomain` for the codomain center and radius.
#[derive(Debug, Clone)]
pub(crate) struct FnGrad {
    pub dy: Vec<f64>,
    pub dd: Vec<f64>,
    pub dcodomain: [f64; 2],
}

impl FnGrad {
    fn new(n: usize) -> Self {
        FnGrad {
            dy: vec![0.0; n],
            dd: vec![0.0; n],
            dcodomain: [0.0; 2],
        }
    }
}

/// Prepared inner map for batch evaluation.
#[derive(Debug, Clone)]
pub(crate) enum InnerEval {
    Spline(MonotoneEval),
    Prelu(f64),
}

impl InnerEval {
    pub fn grad_buffer(&self) -> FnGrad {
        match self {
            InnerEval::Spline(s) => FnGrad::new(s.len()),
            InnerEval::Prelu(_) => FnGrad::new(1),
        }
    }

    /// Exact range over `[lo, hi]`.
    #[inline]
    pub fn range(&self, lo: f64, hi: f64) -> Interval {
        match self {
            InnerEval::Spline(s) => Interval::new(s.value(lo), s.value(hi)),
            InnerEval::Prelu(a) => Prelu { slope: *a }.range_on(Interval::new(lo, hi)),
        }
    }
}

/// Prepared outer map for batch evaluation.
#[derive(Debug, Clone)]
pub(crate) enum OuterEval {
    Spline(GeneralEval),
    Prelu(f64),
}

impl OuterEval {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            OuterEval::Spline(s) => s.value(x),
            OuterEval::Prelu(a) => prelu::prelu(*a, x),
        }
    }

    #[inline]
    pub fn value_deriv(&self, x: f64) -> (f64, f64) {
        match self {
            OuterEval::Spline(s) => s.value_deriv(x),
            OuterEval::Prelu(a) => prelu::prelu_value_deriv(*a, x),
        }
    }

    #[inline]
    pub fn accumulate(&self, x: f64, g: f64, grad: &mut FnGrad) {
        match self {
            OuterEval::Spline(s) => s.accumulate(x, g, grad),
            OuterEval::Prelu(_) => grad.dy[0] += g * x.min(0.0),
        }
    }

    pub fn grad_buffer(&self) -> FnGrad {
        match self {
            OuterEval::Spline(s) => FnGrad::new(s.len()),
            OuterEval::Prelu(_) => FnGrad::new(1),
        }
    }

    /// Exact range over `[lo, hi]`.
    pub fn range(&self, lo: f64, hi: f64) -> Interval {
        match self {
            OuterEval::Spline(s) => s.range(Interval::new(lo, hi)),
            OuterEval::Prelu(a) => Prelu { slope: *a }.range_on(Interval::new(lo, hi)),
        }
    }
}

impl InnerFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            InnerFn::Spline(s) => s.eval(x),
            InnerFn::Prelu(p) => p.eval(x),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            InnerFn::Spline(s) => s.deriv(x),
            InnerFn::Prelu(p) => p.deriv(x),
        }
    }

    pub fn range_on(&self, query: Interval) -> Interval {
        match self {
            InnerFn::Spline(s) => s.range_on(query),
            InnerFn::Prelu(p) => p.range_on(query),
        }
    }

    /// Upper bound on `|f'|` over `query`; infinite across a jump.
    pub fn lipschitz_on(&self, query: Interval) -> f64 {
        match self {
            InnerFn::Spline(s) => s.lipschitz_on(query),
            InnerFn::Prelu(p) => p.lipschitz_on(query),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            InnerFn::Spline(s) => s.raw.len(),
            InnerFn::Prelu(_) => 1,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            InnerFn::Spline(s) => s.raw.clone(),
            InnerFn::Prelu(p) => vec![p.slope],
        }
    }

    pub fn set_params(&mut self, p: &[f64]) {
        match self {
            InnerFn::Spline(s) => s.raw.copy_from_slice(p),
            InnerFn::Prelu(pr) => pr.slope = p[0],
        }
    }

    pub fn domain(&self) -> Option<KnotGrid> {
        match self {
            InnerFn::Spline(s) => Some(s.grid),
            InnerFn::Prelu(_) => None,
        }
    }

    pub(crate) fn prepare(&self) -> InnerEval {
        match self {
            InnerFn::Spline(s) => InnerEval::Spline(s.prepare()),
            InnerFn::Prelu(p) => InnerEval::Prelu(p.slope),
        }
    }

    /// Converts an accumulated gradient into parameter order.
    pub(crate) fn finish_grad(&self, ev: &InnerEval, grad: &FnGrad) -> Vec<f64> {
        match (self, ev) {
            (InnerFn::Spline(s), InnerEval::Spline(e)) => s.finish_grad(e, grad),
            _ => vec![grad.dy[0]],
        }
    }
}

impl OuterFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            OuterFn::Spline(s) => s.eval(x),
            OuterFn::Prelu(p) => p.eval(x),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            OuterFn::Spline(s) => s.deriv(x),
            OuterFn::Prelu(p) => p.deriv(x),
        }
    }

    pub fn range_on(&self, query: Interval) -> Interval {
        match self {
            OuterFn::Spline(s) => s.range_on(query),
            OuterFn::Prelu(p) => p.range_on(query),
        }
    }

    pub fn lipschitz_on(&self, query: Interval) -> f64 {
        match self {
            OuterFn::Spline(s) => s.lipschitz_on(query),
            OuterFn::Prelu(p) => p.lipschitz_on(query),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            OuterFn::Spline(s) => s.n_params(),
            OuterFn::Prelu(_) => 1,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            OuterFn::Spline(s) => s.params(),
            OuterFn::Prelu(p) => vec![p.slope],
        }
    }

    pub fn set_params(&mut self, p: &[f64]) {
        match self {
            OuterFn::Spline(s) => s.set_params(p),
            OuterFn::Prelu(pr) => pr.slope = p[0],
        }
    }

    pub fn domain(&self) -> Option<KnotGrid> {
        match self {
            OuterFn::Spline(s) => Some(s.grid),
            OuterFn::Prelu(_) => None,
        }
    }

    pub(crate) fn prepare(&self) -> OuterEval {
        match self {
            OuterFn::Spline(s) => OuterEval::Spline(s.prepare()),
            OuterFn::Prelu(p) => OuterEval::Prelu(p.slope),
        }
    }

    pub(crate) fn finish_grad(&self, ev: &OuterEval, grad: &FnGrad) -> Vec<f64> {
        match (self, ev) {
            (OuterFn::Spline(s), OuterEval::Spline(e)) => s.finish_grad(e, grad),
            _ => vec![grad.dy[0]],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_input() {
        assert!(KnotGrid::new(1.0, 1.0, 4).is_err());
        assert!(KnotGrid::new(0.0, 1.0, 1).is_err());
        assert!(KnotGrid::new(0.0, f64::INFINITY, 3).is_err());
    }

    #[test]
    fn knot_positions() {
        let g = KnotGrid::new(-1.0, 2.0, 4).unwrap();
        assert_eq!(g.knots(), vec![-1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn widen_by_margin() {
        let w = Interval::new(0.0, 1.0).widen(0.1);
        assert!((w.lo + 0.05).abs() < 1e-15 && (w.hi - 1.05).abs() < 1e-15);
    }
}
