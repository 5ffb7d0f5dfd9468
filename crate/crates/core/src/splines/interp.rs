//! Uniform-grid interpolation kernels shared by the inner and outer splines.
//!
//! Everything here works on raw ordinate slices so the block kernels can
//! evaluate millions of points without touching the owning spline types.

use super::{KnotGrid, SplineKind};

/// Discriminant threshold below which a cubic piece is treated as having no
/// interior critical point.
pub(crate) const CRITICAL_DISCRIMINANT_EPS: f64 = 1e-14;

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Fritsch–Carlson endpoint slope from the two adjacent secants.
///
/// Returns the slope together with its partials with respect to
/// `(near, far)`.
fn edge_slope(near: f64, far: f64) -> (f64, f64, f64) {
    let e = 1.5 * near - 0.5 * far;
    if sign(e) != sign(near) {
        (0.0, 0.0, 0.0)
    } else if sign(near) != sign(far) && e.abs() > (3.0 * near).abs() {
        (3.0 * near, 3.0, 0.0)
    } else {
        (e, 1.5, -0.5)
    }
}

/// Interior slope: harmonic mean of the neighbouring secants, zero at local
/// extrema. Returns slope and partials with respect to `(left, right)`.
fn interior_slope(left: f64, right: f64) -> (f64, f64, f64) {
    if left * right > 0.0 {
        let sum = left + right;
        let d = 2.0 * left * right / sum;
        (
            d,
            2.0 * right * right / (sum * sum),
            2.0 * left * left / (sum * sum),
        )
    } else {
        (0.0, 0.0, 0.0)
    }
}

/// PCHIP knot slopes for ordinates `y` on a uniform grid with spacing `h`.
pub(crate) fn pchip_slopes(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    debug_assert!(n >= 2);
    let secants: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = secants[0];
        d[1] = secants[0];
        return d;
    }
    d[0] = edge_slope(secants[0], secants[1]).0;
    d[n - 1] = edge_slope(secants[n - 2], secants[n - 3]).0;
    for k in 1..n - 1 {
        d[k] = interior_slope(secants[k - 1], secants[k]).0;
    }
    d
}

/// Vector-Jacobian product of [`pchip_slopes`]: adds `dd^T ∂d/∂y` into `dy`.
pub(crate) fn pchip_slopes_backward(y: &[f64], h: f64, dd: &[f64], dy: &mut [f64]) {
    let n = y.len();
    let secants: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let mut dsec = vec![0.0; n - 1];
    if n == 2 {
        dsec[0] = dd[0] + dd[1];
    } else {
        let (_, a, b) = edge_slope(secants[0], secants[1]);
        dsec[0] += dd[0] * a;
        dsec[1] += dd[0] * b;
        let (_, a, b) = edge_slope(secants[n - 2], secants[n - 3]);
        dsec[n - 2] += dd[n - 1] * a;
        dsec[n - 3] += dd[n - 1] * b;
        for k in 1..n - 1 {
            let (_, a, b) = interior_slope(secants[k - 1], secants[k]);
            dsec[k - 1] += dd[k] * a;
            dsec[k] += dd[k] * b;
        }
    }
    for (k, g) in dsec.iter().enumerate() {
        dy[k + 1] += g / h;
        dy[k] -= g / h;
    }
}

/// Hermite basis values at local coordinate `t` in `[0, 1]`.
#[inline]
fn hermite(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    ]
}

/// Derivatives of the Hermite basis with respect to `t`.
#[inline]
fn hermite_dt(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [
        6.0 * t2 - 6.0 * t,
        3.0 * t2 - 4.0 * t + 1.0,
        -6.0 * t2 + 6.0 * t,
        3.0 * t2 - 2.0 * t,
    ]
}

/// A uniform-grid interpolant with its slopes resolved.
///
/// Slopes are computed when the curve is built and dropped with it, so they
/// always reflect the ordinates they were built from.
#[derive(Debug, Clone)]
pub(crate) struct Curve {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    inv_step: f64,
    pub y: Vec<f64>,
    /// PCHIP knot slopes; `None` for piecewise-linear.
    pub d: Option<Vec<f64>>,
}

impl Curve {
    pub fn new(grid: &KnotGrid, y: Vec<f64>, kind: SplineKind) -> Self {
        let step = grid.step();
        let d = match kind {
            SplineKind::Pwl => None,
            SplineKind::Pchip => Some(pchip_slopes(&y, step)),
        };
        Curve {
            lo: grid.lo,
            hi: grid.hi,
            step,
            inv_step: 1.0 / step,
            y,
            d,
        }
    }

    /// Segment index and local coordinate for `x` (clamped into the grid).
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let last = self.y.len() - 2;
        let pos = (x - self.lo) * self.inv_step;
        if pos <= 0.0 {
            return (0, 0.0);
        }
        let k = (pos as usize).min(last);
        let t = (pos - k as f64).min(1.0);
        (k, t)
    }

    /// Interpolated value for `x` inside the grid.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let (k, t) = self.locate(x);
        self.value_at(k, t)
    }

    #[inline]
    pub fn value_at(&self, k: usize, t: f64) -> f64 {
        match &self.d {
            None => self.y[k] + t * (self.y[k + 1] - self.y[k]),
            Some(d) => {
                let b = hermite(t);
                b[0] * self.y[k]
                    + b[1] * self.step * d[k]
                    + b[2] * self.y[k + 1]
                    + b[3] * self.step * d[k + 1]
            }
        }
    }

    #[inline]
    pub fn deriv_at(&self, k: usize, t: f64) -> f64 {
        match &self.d {
            None => (self.y[k + 1] - self.y[k]) * self.inv_step,
            Some(d) => {
                let b = hermite_dt(t);
                (b[0] * self.y[k]
                    + b[1] * self.step * d[k]
                    + b[2] * self.y[k + 1]
                    + b[3] * self.step * d[k + 1])
                    * self.inv_step
            }
        }
    }

    /// Accumulates `g * ∂value/∂(y, d)` for a point inside the grid.
    /// `dd` is only touched for PCHIP.
    #[inline]
    pub fn accumulate(&self, k: usize, t: f64, g: f64, dy: &mut [f64], dd: &mut [f64]) {
        match &self.d {
            None => {
                dy[k] += g * (1.0 - t);
                dy[k + 1] += g * t;
            }
            Some(_) => {
                let b = hermite(t);
                dy[k] += g * b[0];
                dy[k + 1] += g * b[2];
                dd[k] += g * b[1] * self.step;
                dd[k + 1] += g * b[3] * self.step;
            }
        }
    }

    /// Slope used for extrapolation past the left (`false`) or right
    /// (`true`) boundary.
    pub fn boundary_slope(&self, right: bool) -> f64 {
        let n = self.y.len();
        match &self.d {
            None => {
                if right {
                    (self.y[n - 1] - self.y[n - 2]) * self.inv_step
                } else {
                    (self.y[1] - self.y[0]) * self.inv_step
                }
            }
            Some(d) => {
                if right {
                    d[n - 1]
                } else {
                    d[0]
                }
            }
        }
    }

    /// Accumulates `g` times the gradient of a boundary slope.
    pub fn accumulate_boundary_slope(&self, right: bool, g: f64, dy: &mut [f64], dd: &mut [f64]) {
        let n = self.y.len();
        match &self.d {
            None => {
                let (a, b) = if right { (n - 2, n - 1) } else { (0, 1) };
                dy[b] += g * self.inv_step;
                dy[a] -= g * self.inv_step;
            }
            Some(_) => {
                if right {
                    dd[n - 1] += g;
                } else {
                    dd[0] += g;
                }
            }
        }
    }

    /// Folds accumulated slope gradients into ordinate gradients.
    pub fn finish_backward(&self, dd: &[f64], dy: &mut [f64]) {
        if self.d.is_some() {
            pchip_slopes_backward(&self.y, self.step, dd, dy);
        }
    }

    /// Interior critical points (as `x` positions) of segment `k`.
    pub fn critical_points(&self, k: usize, out: &mut Vec<f64>) {
        let Some(d) = &self.d else { return };
        let h = self.step;
        let (y0, y1, d0, d1) = (self.y[k], self.y[k + 1], d[k] * h, d[k + 1] * h);
        let a = 6.0 * y0 + 3.0 * d0 - 6.0 * y1 + 3.0 * d1;
        let b = -6.0 * y0 - 4.0 * d0 + 6.0 * y1 - 2.0 * d1;
        let c = d0;
        let x0 = self.lo + k as f64 * h;
        let mut push = |t: f64| {
            if t > 0.0 && t < 1.0 {
                out.push(x0 + t * h);
            }
        };
        if a.abs() < 1e-300 {
            if b != 0.0 {
                push(-c / b);
            }
            return;
        }
        let disc = b * b - 4.0 * a * c;
        if disc < CRITICAL_DISCRIMINANT_EPS {
            return;
        }
        let sq = disc.sqrt();
        // Numerically stable pair of roots.
        let qv = -0.5 * (b + b.signum() * sq);
        if qv != 0.0 {
            push(qv / a);
            push(c / qv);
        } else {
            push(-b / (2.0 * a));
        }
    }

    /// Every knot position strictly inside `(lo, hi)` plus, for PCHIP, the
    /// interior critical points of the pieces overlapping it.
    pub fn candidates(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        let n = self.y.len();
        let a = lo.max(self.lo);
        let b = hi.min(self.hi);
        if a > b {
            return;
        }
        let first = ((a - self.lo) * self.inv_step).floor().max(0.0) as usize;
        let last = (((b - self.lo) * self.inv_step).ceil() as usize).min(n - 1);
        for k in first..=last {
            let xk = self.lo + k as f64 * self.step;
            if xk >= lo && xk <= hi {
                out.push(xk);
            }
        }
        if self.d.is_some() {
            let mut crit = Vec::new();
            for k in first..last.min(n - 1) {
                self.critical_points(k, &mut crit);
            }
            out.extend(crit.into_iter().filter(|x| *x >= lo && *x <= hi));
        }
    }

    /// Largest absolute derivative over `[lo, hi] ∩ grid`.
    pub fn max_abs_slope(&self, lo: f64, hi: f64) -> f64 {
        let n = self.y.len();
        let a = lo.max(self.lo);
        let b = hi.min(self.hi);
        if a > b {
            return 0.0;
        }
        let first = (((a - self.lo) * self.inv_step).floor().max(0.0) as usize).min(n - 2);
        let last = ((((b - self.lo) * self.inv_step).ceil() as usize).max(1) - 1).min(n - 2);
        let mut best: f64 = 0.0;
        for k in first..=last.max(first) {
            match &self.d {
                None => best = best.max(((self.y[k + 1] - self.y[k]) * self.inv_step).abs()),
                Some(_) => {
                    // p'(t) is quadratic in t: the max of |p'| sits at an end
                    // or at the vertex.
                    let mut ts = vec![0.0, 1.0];
                    let h = self.step;
                    let d = self.d.as_ref().unwrap();
                    let (y0, y1, d0, d1) = (self.y[k], self.y[k + 1], d[k] * h, d[k + 1] * h);
                    let a2 = 6.0 * y0 + 3.0 * d0 - 6.0 * y1 + 3.0 * d1;
                    let b2 = -6.0 * y0 - 4.0 * d0 + 6.0 * y1 - 2.0 * d1;
                    if a2 != 0.0 {
                        let tv = -b2 / (2.0 * a2);
                        if tv > 0.0 && tv < 1.0 {
                            ts.push(tv);
                        }
                    }
                    for t in ts {
                        best = best.max(self.deriv_at(k, t).abs());
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> KnotGrid {
        KnotGrid::new(lo, hi, n).unwrap()
    }

    #[test]
    fn pchip_reproduces_knots_and_linear_data() {
        let y = [0.0, 1.0, 2.0, 3.0];
        let g = grid(0.0, 3.0, 4);
        let ip = Curve::new(&g, y.to_vec(), SplineKind::Pchip);
        for x in [0.0, 0.3, 1.0, 1.7, 2.5, 3.0] {
            assert!((ip.value(x) - x).abs() < 1e-12);
        }
        assert_eq!(ip.d.as_ref().unwrap(), &vec![1.0; 4]);
    }

    #[test]
    fn zero_slope_at_local_extremum() {
        let d = pchip_slopes(&[0.0, 2.0, 1.0], 1.0);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn slope_backward_matches_finite_differences() {
        let y = [0.1, 0.7, 0.4, 1.3, 1.35, 0.2];
        let h = 0.4;
        let dd = [0.3, -1.1, 0.5, 0.9, -0.2, 0.7];
        let mut dy = vec![0.0; y.len()];
        pchip_slopes_backward(&y, h, &dd, &mut dy);
        for j in 0..y.len() {
            let eps = 1e-6;
            let mut yp = y.to_vec();
            yp[j] += eps;
            let mut ym = y.to_vec();
            ym[j] -= eps;
            let f = |v: &[f64]| -> f64 {
                pchip_slopes(v, h)
                    .iter()
                    .zip(dd.iter())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let fd = (f(&yp) - f(&ym)) / (2.0 * eps);
            assert!((fd - dy[j]).abs() < 1e-6, "{j}: {fd} vs {}", dy[j]);
        }
    }

    #[test]
    fn critical_point_of_hump_is_found() {
        // Interior max of the middle knot is a flat point; the outer pieces
        // have no critical points, but a shifted hump does.
        let y = [0.0, 1.0, 0.9, 0.0];
        let g = grid(0.0, 3.0, 4);
        let ip = Curve::new(&g, y.to_vec(), SplineKind::Pchip);
        let mut c = Vec::new();
        ip.candidates(0.0, 3.0, &mut c);
        let best = c.iter().map(|&x| ip.value(x)).fold(f64::MIN, f64::max);
        let dense = (0..=100_000)
            .map(|i| ip.value(3.0 * i as f64 / 100_000.0))
            .fold(f64::MIN, f64::max);
        assert!((best - dense).abs() < 1e-9);
    }
}
