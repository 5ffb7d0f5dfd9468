use super::interp::Curve;
use super::{FnGrad, Interval, KnotGrid, SplineKind};

/// Epsilon in the denominator of the codomain map.
pub const CODOMAIN_EPS: f64 = 1e-8;

/// Affine output window `[center - radius, center + radius]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Codomain {
    pub center: f64,
    pub radius: f64,
}

/// General spline with linear extrapolation and an optional codomain map.
///
/// With a codomain, the interpolated value `t` is mapped affinely so that
/// the smallest knot ordinate lands on `center - radius` and the largest on
/// `center + radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralSpline {
    pub grid: KnotGrid,
    pub values: Vec<f64>,
    pub kind: SplineKind,
    pub codomain: Option<Codomain>,
}

/// First index of the minimum and maximum.
fn argmin_argmax(v: &[f64]) -> (usize, usize) {
    let mut imin = 0;
    let mut imax = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[imin] {
            imin = i;
        }
        if x > v[imax] {
            imax = i;
        }
    }
    (imin, imax)
}

impl GeneralSpline {
    pub fn new(grid: KnotGrid, values: Vec<f64>, kind: SplineKind) -> Self {
        assert_eq!(
            values.len(),
            grid.count,
            "values length must equal knot count"
        );
        GeneralSpline {
            grid,
            values,
            kind,
            codomain: None,
        }
    }

    /// Ordinates equal to knot positions.
    pub fn identity(grid: KnotGrid, kind: SplineKind) -> Self {
        Self::new(grid, grid.knots(), kind)
    }

    /// Identity with a codomain matching the grid, so the map starts as the
    /// identity up to the codomain epsilon.
    pub fn identity_with_codomain(grid: KnotGrid, kind: SplineKind) -> Self {
        let mut s = Self::identity(grid, kind);
        s.codomain = Some(Codomain {
            center: grid.interval().mid(),
            radius: 0.5 * grid.interval().width(),
        });
        s
    }

    pub fn n_params(&self) -> usize {
        self.values.len() + if self.codomain.is_some() { 2 } else { 0 }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.values.clone();
        if let Some(c) = self.codomain {
            p.push(c.center);
            p.push(c.radius);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let n = self.values.len();
        self.values.copy_from_slice(&p[..n]);
        if let Some(c) = self.codomain.as_mut() {
            c.center = p[n];
            c.radius = p[n + 1];
        }
    }

    pub(crate) fn prepare(&self) -> GeneralEval {
        let curve = Curve::new(&self.grid, self.values.clone(), self.kind);
        let left_slope = curve.boundary_slope(false);
        let right_slope = curve.boundary_slope(true);
        let map = self.codomain.map(|c| {
            let (imin, imax) = argmin_argmax(&self.values);
            let t_min = self.values[imin];
            let denom = self.values[imax] - t_min + CODOMAIN_EPS;
            CodomainMap {
                center: c.center,
                radius: c.radius,
                t_min,
                denom,
                scale: 2.0 * c.radius / denom,
                imin,
                imax,
            }
        });
        GeneralEval {
            curve,
            left_slope,
            right_slope,
            map,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.prepare().value(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.prepare().value_deriv(x).1
    }

    /// Value before the codomain map.
    pub fn eval_unmapped(&self, x: f64) -> f64 {
        self.prepare().raw_value(x)
    }

    /// Exact range over `query`.
    ///
    /// Extrema of the unmapped spline sit at the query ends, at knots inside
    /// the query, or at interior critical points of cubic pieces.
    pub fn range_on(&self, query: Interval) -> Interval {
        self.prepare().range(query)
    }

    /// Largest `|Φ'|` over `query`, extrapolation included.
    pub fn lipschitz_on(&self, query: Interval) -> f64 {
        let ev = self.prepare();
        let mut best = ev.curve.max_abs_slope(query.lo, query.hi);
        if query.lo < self.grid.lo {
            best = best.max(ev.left_slope.abs());
        }
        if query.hi > self.grid.hi {
            best = best.max(ev.right_slope.abs());
        }
        match &ev.map {
            None => best,
            Some(m) => best * m.scale.abs(),
        }
    }

    /// Evaluates the unmapped spline at the knots of `new_grid`.
    ///
    /// Piecewise-linear splines clamp queries to the old domain; PCHIP
    /// splines extrapolate. Kind and codomain carry over.
    pub fn resample(&self, new_grid: KnotGrid) -> GeneralSpline {
        let ev = self.prepare();
        let values = new_grid
            .knots()
            .into_iter()
            .map(|x| match self.kind {
                SplineKind::Pwl => ev.curve.value(x.clamp(self.grid.lo, self.grid.hi)),
                SplineKind::Pchip => ev.raw_value(x),
            })
            .collect();
        GeneralSpline {
            grid: new_grid,
            values,
            kind: self.kind,
            codomain: self.codomain,
        }
    }

    pub(crate) fn finish_grad(&self, ev: &GeneralEval, grad: &FnGrad) -> Vec<f64> {
        let mut dy = grad.dy.clone();
        ev.curve.finish_backward(&grad.dd, &mut dy);
        if self.codomain.is_some() {
            dy.extend_from_slice(&grad.dcodomain);
        }
        dy
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CodomainMap {
    pub center: f64,
    pub radius: f64,
    pub t_min: f64,
    pub denom: f64,
    pub scale: f64,
    pub imin: usize,
    pub imax: usize,
}

impl CodomainMap {
    #[inline]
    pub fn apply(&self, t: f64) -> f64 {
        self.center - self.radius + self.scale * (t - self.t_min)
    }
}

/// General spline with slopes and codomain constants resolved.
#[derive(Debug, Clone)]
pub(crate) struct GeneralEval {
    pub curve: Curve,
    pub left_slope: f64,
    pub right_slope: f64,
    pub map: Option<CodomainMap>,
}

impl GeneralEval {
    pub fn len(&self) -> usize {
        self.curve.y.len()
    }

    pub fn range(&self, query: Interval) -> Interval {
        let mut cand = vec![query.lo, query.hi];
        self.curve.candidates(query.lo, query.hi, &mut cand);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in cand {
            let t = self.raw_value(x);
            lo = lo.min(t);
            hi = hi.max(t);
        }
        match &self.map {
            None => Interval::new(lo, hi),
            Some(m) => Interval::spanning(m.apply(lo), m.apply(hi)),
        }
    }

    #[inline]
    pub fn raw_value(&self, x: f64) -> f64 {
        self.raw_value_deriv(x).0
    }

    #[inline]
    fn raw_value_deriv(&self, x: f64) -> (f64, f64) {
        let c = &self.curve;
        if x < c.lo {
            (c.y[0] + self.left_slope * (x - c.lo), self.left_slope)
        } else if x > c.hi {
            (
                c.y[c.y.len() - 1] + self.right_slope * (x - c.hi),
                self.right_slope,
            )
        } else {
            let (k, t) = c.locate(x);
            (c.value_at(k, t), c.deriv_at(k, t))
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let t = self.raw_value(x);
        match &self.map {
            None => t,
            Some(m) => m.apply(t),
        }
    }

    #[inline]
    pub fn value_deriv(&self, x: f64) -> (f64, f64) {
        let (t, dt) = self.raw_value_deriv(x);
        match &self.map {
            None => (t, dt),
            Some(m) => (m.apply(t), m.scale * dt),
        }
    }

    pub fn accumulate(&self, x: f64, g: f64, grad: &mut FnGrad) {
        let c = &self.curve;
        let n = c.y.len();
        let (t, gt) = match &self.map {
            None => (0.0, g),
            Some(m) => (self.raw_value(x), g * m.scale),
        };
        if x < c.lo {
            grad.dy[0] += gt;
            c.accumulate_boundary_slope(false, gt * (x - c.lo), &mut grad.dy, &mut grad.dd);
        } else if x > c.hi {
            grad.dy[n - 1] += gt;
            c.accumulate_boundary_slope(true, gt * (x - c.hi), &mut grad.dy, &mut grad.dd);
        } else {
            let (k, tt) = c.locate(x);
            c.accumulate(k, tt, gt, &mut grad.dy, &mut grad.dd);
        }
        if let Some(m) = &self.map {
            let rel = (t - m.t_min) / m.denom;
            let two_r = 2.0 * m.radius;
            grad.dy[m.imin] += g * two_r * (-1.0 / m.denom + rel / m.denom);
            grad.dy[m.imax] += g * (-two_r * rel / m.denom);
            grad.dcodomain[0] += g;
            grad.dcodomain[1] += g * (-1.0 + 2.0 * rel);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> KnotGrid {
        KnotGrid::new(lo, hi, n).unwrap()
    }

    fn dense_range(s: &GeneralSpline, q: Interval, n: usize) -> Interval {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=n {
            let v = s.eval(q.lo + q.width() * i as f64 / n as f64);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Interval::new(lo, hi)
    }

    #[test]
    fn identity_evaluates_to_input() {
        let s = GeneralSpline::identity(grid(0.0, 2.0, 5), SplineKind::Pchip);
        assert!((s.eval(1.3) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn linear_extension_past_last_segment() {
        let s = GeneralSpline::new(grid(0.0, 1.0, 2), vec![0.0, 2.0], SplineKind::Pwl);
        assert!((s.eval(2.0) - 4.0).abs() < 1e-12);
        assert!((s.eval(-1.0) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn codomain_map_centers_midpoint() {
        let mut s = GeneralSpline::new(grid(0.0, 1.0, 2), vec![0.0, 1.0], SplineKind::Pwl);
        s.codomain = Some(Codomain {
            center: 0.0,
            radius: 1.0,
        });
        assert!(s.eval(0.5).abs() < 1e-7);
    }

    #[test]
    fn pwl_range_hits_interior_knot() {
        let s = GeneralSpline::new(grid(0.0, 2.0, 3), vec![0.0, 2.0, 1.0], SplineKind::Pwl);
        let q = Interval::new(0.5, 1.5);
        let r = s.range_on(q);
        let oracle = dense_range(&s, q, 100_000);
        assert!((r.lo - oracle.lo).abs() < 1e-9 && (r.hi - oracle.hi).abs() < 1e-9);
        assert!((r.lo - 1.0).abs() < 1e-12 && (r.hi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pchip_hump_range_matches_dense_sampling() {
        let s = GeneralSpline::new(
            grid(-1.0, 1.0, 6),
            vec![0.0, 0.8, 1.0, 0.2, -0.5, 0.3],
            SplineKind::Pchip,
        );
        for q in [
            Interval::new(-1.0, 1.0),
            Interval::new(-0.9, 0.15),
            Interval::new(-1.5, 1.4),
        ] {
            let r = s.range_on(q);
            let oracle = dense_range(&s, q, 100_000);
            assert!((r.lo - oracle.lo).abs() < 1e-9, "{q}: {r} vs {oracle}");
            assert!((r.hi - oracle.hi).abs() < 1e-9, "{q}: {r} vs {oracle}");
        }
    }

    #[test]
    fn resample_on_same_grid_is_fixed_point() {
        let s = GeneralSpline::new(
            grid(0.0, 1.0, 4),
            vec![0.3, -0.2, 0.9, 0.1],
            SplineKind::Pchip,
        );
        let r = s.resample(s.grid);
        for (a, b) in s.values.iter().zip(&r.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pwl_resample_wider_domain_clamps() {
        let s = GeneralSpline::new(grid(0.0, 1.0, 3), vec![0.5, 2.0, -1.0], SplineKind::Pwl);
        let r = s.resample(grid(-1.0, 2.0, 7));
        assert_eq!(r.values[0], 0.5);
        assert_eq!(r.values[1], 0.5);
        assert_eq!(r.values[5], -1.0);
        assert_eq!(r.values[6], -1.0);
    }

    #[test]
    fn codomain_gradients_match_finite_differences() {
        let mut s = GeneralSpline::new(
            grid(0.0, 1.0, 5),
            vec![0.1, 0.7, -0.3, 0.4, 0.9],
            SplineKind::Pchip,
        );
        s.codomain = Some(Codomain {
            center: 0.2,
            radius: 1.3,
        });
        for x in [-0.4, 0.05, 0.37, 0.8, 1.6] {
            let ev = s.prepare();
            let mut gb = FnGrad::new(5);
            ev.accumulate(x, 1.0, &mut gb);
            let got = s.finish_grad(&ev, &gb);
            let p0 = s.params();
            for j in 0..p0.len() {
                let h = 1e-6;
                let mut a = s.clone();
                let mut pp = p0.clone();
                pp[j] += h;
                a.set_params(&pp);
                let mut b = s.clone();
                pp[j] -= 2.0 * h;
                b.set_params(&pp);
                let fd = (a.eval(x) - b.eval(x)) / (2.0 * h);
                assert!(
                    (fd - got[j]).abs() < 1e-7,
                    "x={x} j={j}: {fd} vs {}",
                    got[j]
                );
            }
        }
    }
}
