use super::interp::Curve;
use super::{FnGrad, Interval, KnotGrid, SplineKind};

/// Normalization epsilon in the cumulative-softplus knot values.
pub const MONOTONE_EPS: f64 = 1e-8;

/// `ln(e - 1)`: the raw value whose softplus is exactly 1.
const UNIT_RAW: f64 = 0.541_324_854_612_918_1;

pub(crate) fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else if v < -30.0 {
        v.exp()
    } else {
        v.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Non-decreasing spline with values in `[0, 1]`.
///
/// Knot values are normalized cumulative sums of softplus increments, so any
/// raw vector yields a strictly increasing knot sequence. Below the grid the
/// spline is 0 and above it 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneSpline {
    pub grid: KnotGrid,
    pub raw: Vec<f64>,
    pub kind: SplineKind,
    pub eps: f64,
}

impl MonotoneSpline {
    /// Equal increments.
    pub fn new(grid: KnotGrid, kind: SplineKind) -> Self {
        MonotoneSpline {
            grid,
            raw: vec![UNIT_RAW; grid.count],
            kind,
            eps: MONOTONE_EPS,
        }
    }

    pub fn from_raw(grid: KnotGrid, raw: Vec<f64>, kind: SplineKind) -> Self {
        assert_eq!(raw.len(), grid.count, "raw length must equal knot count");
        MonotoneSpline {
            grid,
            raw,
            kind,
            eps: MONOTONE_EPS,
        }
    }

    /// Knot values `k / (G - 1)` up to ~1e-8, i.e. the identity on `[0, 1]`
    /// rescaled to the grid.
    pub fn identity_ramp(grid: KnotGrid, kind: SplineKind) -> Self {
        let mut raw = vec![UNIT_RAW; grid.count];
        raw[0] = -50.0;
        MonotoneSpline {
            grid,
            raw,
            kind,
            eps: MONOTONE_EPS,
        }
    }

    /// Cumulative softplus sums and their total.
    fn cumulative(&self) -> (Vec<f64>, f64) {
        let mut acc = 0.0;
        let u: Vec<f64> = self
            .raw
            .iter()
            .map(|&v| {
                acc += softplus(v);
                acc
            })
            .collect();
        (u, acc)
    }

    pub fn knot_values(&self) -> Vec<f64> {
        let (u, s) = self.cumulative();
        let denom = s + self.eps;
        u.into_iter().map(|x| x / denom).collect()
    }

    pub(crate) fn prepare(&self) -> MonotoneEval {
        MonotoneEval {
            curve: Curve::new(&self.grid, self.knot_values(), self.kind),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.prepare().value(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.prepare().value_deriv(x).1
    }

    /// Exact range over `query`; monotonicity reduces it to the endpoints.
    pub fn range_on(&self, query: Interval) -> Interval {
        let ev = self.prepare();
        Interval::new(ev.value(query.lo), ev.value(query.hi))
    }

    /// Largest slope over `query`. Infinite when `query` straddles one of the
    /// jumps at the grid ends.
    pub fn lipschitz_on(&self, query: Interval) -> f64 {
        let ev = self.prepare();
        let c = &ev.curve.y;
        let jump_lo = query.lo < self.grid.lo && query.hi >= self.grid.lo && c[0] > 0.0;
        let jump_hi = query.lo <= self.grid.hi && query.hi > self.grid.hi && c[c.len() - 1] < 1.0;
        if jump_lo || jump_hi {
            return f64::INFINITY;
        }
        ev.curve.max_abs_slope(query.lo, query.hi)
    }

    /// Chains knot-value gradients back to the raw increments.
    pub(crate) fn finish_grad(&self, ev: &MonotoneEval, grad: &FnGrad) -> Vec<f64> {
        let mut dc = grad.dy.clone();
        ev.curve.finish_backward(&grad.dd, &mut dc);
        self.knot_values_backward(&dc)
    }

    /// Vector-Jacobian product of [`knot_values`](Self::knot_values).
    pub fn knot_values_backward(&self, dc: &[f64]) -> Vec<f64> {
        let (u, s) = self.cumulative();
        let denom = s + self.eps;
        let n = u.len();
        let mut du: Vec<f64> = dc.iter().map(|g| g / denom).collect();
        let cross: f64 = dc.iter().zip(&u).map(|(g, uk)| g * uk).sum();
        du[n - 1] -= cross / (denom * denom);
        let mut acc = 0.0;
        let mut out = vec![0.0; n];
        for i in (0..n).rev() {
            acc += du[i];
            out[i] = acc * sigmoid(self.raw[i]);
        }
        out
    }
}

/// Monotone spline with its knot values and slopes resolved.
#[derive(Debug, Clone)]
pub(crate) struct MonotoneEval {
    pub curve: Curve,
}

impl MonotoneEval {
    pub fn len(&self) -> usize {
        self.curve.y.len()
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        if x < self.curve.lo {
            0.0
        } else if x > self.curve.hi {
            1.0
        } else {
            self.curve.value(x)
        }
    }

    #[inline]
    pub fn value_deriv(&self, x: f64) -> (f64, f64) {
        if x < self.curve.lo {
            (0.0, 0.0)
        } else if x > self.curve.hi {
            (1.0, 0.0)
        } else {
            let (k, t) = self.curve.locate(x);
            (self.curve.value_at(k, t), self.curve.deriv_at(k, t))
        }
    }

    #[inline]
    pub fn accumulate(&self, x: f64, g: f64, grad: &mut FnGrad) {
        if x >= self.curve.lo && x <= self.curve.hi {
            let (k, t) = self.curve.locate(x);
            self.curve.accumulate(k, t, g, &mut grad.dy, &mut grad.dd);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> KnotGrid {
        KnotGrid::new(lo, hi, n).unwrap()
    }

    #[test]
    fn unit_raw_has_unit_softplus() {
        assert!((softplus(UNIT_RAW) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn three_knot_equal_increments() {
        let s = MonotoneSpline::new(grid(0.0, 1.0, 3), SplineKind::Pwl);
        let c = s.knot_values();
        for (k, want) in [1.0 / 3.0, 2.0 / 3.0, 1.0].iter().enumerate() {
            assert!((c[k] - want).abs() < 1e-8);
        }
        assert!((s.eval(0.25) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn constant_extension() {
        let s = MonotoneSpline::new(grid(-1.0, 1.0, 5), SplineKind::Pchip);
        assert_eq!(s.eval(6.0), 1.0);
        assert_eq!(s.eval(-6.0), 0.0);
        assert_eq!(s.deriv(6.0), 0.0);
    }

    #[test]
    fn identity_ramp_is_identity_on_unit_grid() {
        let s = MonotoneSpline::identity_ramp(grid(0.0, 1.0, 7), SplineKind::Pwl);
        for x in [0.0, 0.1, 0.5, 0.93, 1.0] {
            assert!((s.eval(x) - x).abs() < 1e-7);
        }
    }

    #[test]
    fn last_knot_value_is_just_below_one() {
        let s = MonotoneSpline::from_raw(
            grid(0.0, 1.0, 6),
            vec![0.3, -1.0, 2.0, 0.1, 0.0, 0.7],
            SplineKind::Pwl,
        );
        let c = s.knot_values();
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(c[5] < 1.0 && c[5] > 1.0 - 1e-6);
    }

    #[test]
    fn raw_gradient_matches_finite_differences() {
        let s = MonotoneSpline::from_raw(
            grid(0.0, 1.0, 5),
            vec![0.3, -1.0, 2.0, 0.1, -0.4],
            SplineKind::Pwl,
        );
        let dc = [0.5, -0.2, 1.1, 0.3, -0.7];
        let got = s.knot_values_backward(&dc);
        for j in 0..5 {
            let h = 1e-6;
            let mut p = s.clone();
            p.raw[j] += h;
            let mut m = s.clone();
            m.raw[j] -= h;
            let f = |sp: &MonotoneSpline| -> f64 {
                sp.knot_values().iter().zip(&dc).map(|(a, b)| a * b).sum()
            };
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - got[j]).abs() < 1e-8, "{j}: {fd} vs {}", got[j]);
        }
    }
}
