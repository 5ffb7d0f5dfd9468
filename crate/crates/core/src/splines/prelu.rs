use super::Interval;

/// `max(0, x) + slope * min(0, x)` with a learnable slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prelu {
    pub slope: f64,
}

impl Default for Prelu {
    fn default() -> Self {
        Prelu { slope: 0.25 }
    }
}

#[inline]
pub(crate) fn prelu(a: f64, x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        a * x
    }
}

#[inline]
pub(crate) fn prelu_value_deriv(a: f64, x: f64) -> (f64, f64) {
    if x >= 0.0 {
        (x, 1.0)
    } else {
        (a * x, a)
    }
}

impl Prelu {
    pub fn eval(&self, x: f64) -> f64 {
        prelu(self.slope, x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        prelu_value_deriv(self.slope, x).1
    }

    pub fn range_on(&self, q: Interval) -> Interval {
        let mut lo = self.eval(q.lo).min(self.eval(q.hi));
        let mut hi = self.eval(q.lo).max(self.eval(q.hi));
        if q.lo < 0.0 && q.hi > 0.0 {
            lo = lo.min(0.0);
            hi = hi.max(0.0);
        }
        Interval::new(lo, hi)
    }

    pub fn lipschitz_on(&self, q: Interval) -> f64 {
        let mut l: f64 = 0.0;
        if q.lo < 0.0 {
            l = l.max(self.slope.abs());
        }
        if q.hi >= 0.0 {
            l = l.max(1.0);
        }
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_includes_kink_value() {
        let p = Prelu { slope: -0.5 };
        let r = p.range_on(Interval::new(-2.0, 1.0));
        assert_eq!((r.lo, r.hi), (0.0, 1.0));
    }
}
