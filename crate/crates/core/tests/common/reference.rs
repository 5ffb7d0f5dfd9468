//! Independent evaluation of a network from its flat parameter vector,
//! generic over the scalar type so it can run in extended precision.

use super::dd::Real;
use ndarray::Array2;
use sprecher::block::{Residual, Topology};
use sprecher::network::{BnPlacement, OutputMode, SprecherNetwork};
use sprecher::splines::{InnerFn, KnotGrid, OuterFn, SplineKind};

struct Cursor<'a, T> {
    p: &'a [T],
    at: usize,
}

impl<'a, T: Real> Cursor<'a, T> {
    fn take(&mut self, n: usize) -> &'a [T] {
        let s = &self.p[self.at..self.at + n];
        self.at += n;
        s
    }
}

fn softplus<T: Real>(v: T) -> T {
    (T::of(1.0) + v.exp()).ln()
}

fn secant_slopes<T: Real>(y: &[T], h: T) -> Vec<T> {
    let n = y.len();
    let z = T::of(0.0);
    let del: Vec<T> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h).collect();
    if n == 2 {
        return vec![del[0], del[0]];
    }
    let sgn = |v: T| {
        if v > z {
            1
        } else if v < z {
            -1
        } else {
            0
        }
    };
    let end = |a: T, b: T| {
        let e = T::of(1.5) * a - T::of(0.5) * b;
        if sgn(e) != sgn(a) {
            z
        } else if sgn(a) != sgn(b) && e.abs() > (T::of(3.0) * a).abs() {
            T::of(3.0) * a
        } else {
            e
        }
    };
    let mut d = vec![z; n];
    d[0] = end(del[0], del[1]);
    d[n - 1] = end(del[n - 2], del[n - 3]);
    for k in 1..n - 1 {
        if del[k - 1] * del[k] > z {
            d[k] = T::of(2.0) * del[k - 1] * del[k] / (del[k - 1] + del[k]);
        }
    }
    d
}

/// Piecewise interpolant on a uniform grid, `x` inside the grid.
fn interp<T: Real>(grid: &KnotGrid, y: &[T], d: Option<&[T]>, x: T) -> T {
    let n = y.len();
    let lo = T::of(grid.lo);
    let step = (T::of(grid.hi) - lo) / T::of((n - 1) as f64);
    let pos = (x - lo) / step;
    let k = pos.floor_usize().min(n - 2);
    let t = (pos - T::of(k as f64)).min(T::of(1.0)).max(T::of(0.0));
    match d {
        None => y[k] + t * (y[k + 1] - y[k]),
        Some(d) => {
            let one = T::of(1.0);
            let t2 = t * t;
            let t3 = t2 * t;
            let h00 = T::of(2.0) * t3 - T::of(3.0) * t2 + one;
            let h10 = t3 - T::of(2.0) * t2 + t;
            let h01 = T::of(-2.0) * t3 + T::of(3.0) * t2;
            let h11 = t3 - t2;
            h00 * y[k] + h10 * step * d[k] + h01 * y[k + 1] + h11 * step * d[k + 1]
        }
    }
}

enum Inner<T> {
    Mono {
        grid: KnotGrid,
        c: Vec<T>,
        d: Option<Vec<T>>,
    },
    Prelu(T),
}

impl<T: Real> Inner<T> {
    fn eval(&self, x: T) -> T {
        match self {
            Inner::Prelu(a) => {
                if x >= T::of(0.0) {
                    x
                } else {
                    *a * x
                }
            }
            Inner::Mono { grid, c, d } => {
                if x < T::of(grid.lo) {
                    T::of(0.0)
                } else if x > T::of(grid.hi) {
                    T::of(1.0)
                } else {
                    interp(grid, c, d.as_deref(), x)
                }
            }
        }
    }
}

enum Outer<T> {
    Spline {
        grid: KnotGrid,
        y: Vec<T>,
        d: Option<Vec<T>>,
        left: T,
        right: T,
        map: Option<(T, T, T)>,
    },
    Prelu(T),
}

impl<T: Real> Outer<T> {
    fn eval(&self, x: T) -> T {
        match self {
            Outer::Prelu(a) => {
                if x >= T::of(0.0) {
                    x
                } else {
                    *a * x
                }
            }
            Outer::Spline {
                grid,
                y,
                d,
                left,
                right,
                map,
            } => {
                let n = y.len();
                let t = if x < T::of(grid.lo) {
                    y[0] + *left * (x - T::of(grid.lo))
                } else if x > T::of(grid.hi) {
                    y[n - 1] + *right * (x - T::of(grid.hi))
                } else {
                    interp(grid, y, d.as_deref(), x)
                };
                match map {
                    None => t,
                    Some((offset, scale, t_min)) => *offset + *scale * (t - *t_min),
                }
            }
        }
    }
}

/// Network output rows for `x`. Normalization uses batch statistics when
/// `batch_stats`, running buffers otherwise.
pub fn forward<T: Real>(
    net: &SprecherNetwork,
    params: &[T],
    x: &Array2<f64>,
    batch_stats: bool,
) -> Vec<Vec<T>> {
    let mut cur = Cursor { p: params, at: 0 };
    let mut h: Vec<Vec<T>> = x
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| T::of(v)).collect())
        .collect();
    let b = h.len();

    // Block parameters come first, normalization after, head last.
    struct Bp<T> {
        lambda: Vec<T>,
        eta: T,
        inner: Inner<T>,
        outer: Outer<T>,
        mix: Option<(T, Vec<T>)>,
        res: Vec<T>,
    }
    let mut bps = Vec::new();
    for blk in &net.blocks {
        let lambda = cur.take(blk.d_in).to_vec();
        let eta = cur.take(1)[0];
        let inner = match &blk.phi {
            InnerFn::Prelu(_) => Inner::Prelu(cur.take(1)[0]),
            InnerFn::Spline(s) => {
                let raw = cur.take(s.raw.len());
                let mut acc = T::of(0.0);
                let u: Vec<T> = raw
                    .iter()
                    .map(|&r| {
                        acc = acc + softplus(r);
                        acc
                    })
                    .collect();
                let denom = acc + T::of(s.eps);
                let c: Vec<T> = u.iter().map(|&v| v / denom).collect();
                let step = (T::of(s.grid.hi) - T::of(s.grid.lo)) / T::of((c.len() - 1) as f64);
                let d = (s.kind == SplineKind::Pchip).then(|| secant_slopes(&c, step));
                Inner::Mono { grid: s.grid, c, d }
            }
        };
        let outer = match &blk.outer {
            OuterFn::Prelu(_) => Outer::Prelu(cur.take(1)[0]),
            OuterFn::Spline(s) => {
                let y = cur.take(s.values.len()).to_vec();
                let n = y.len();
                let step = (T::of(s.grid.hi) - T::of(s.grid.lo)) / T::of((n - 1) as f64);
                let d = (s.kind == SplineKind::Pchip).then(|| secant_slopes(&y, step));
                let (left, right) = match &d {
                    None => ((y[1] - y[0]) / step, (y[n - 1] - y[n - 2]) / step),
                    Some(d) => (d[0], d[n - 1]),
                };
                let map = s.codomain.map(|_| {
                    let cc = cur.take(2);
                    let t_min = y.iter().copied().fold(y[0], |a, v| a.min(v));
                    let t_max = y.iter().copied().fold(y[0], |a, v| a.max(v));
                    let scale = T::of(2.0) * cc[1] / (t_max - t_min + T::of(1e-8));
                    (cc[0] - cc[1], scale, t_min)
                });
                Outer::Spline {
                    grid: s.grid,
                    y,
                    d,
                    left,
                    right,
                    map,
                }
            }
        };
        let mix = (blk.mixing.topology != Topology::None)
            .then(|| (cur.take(1)[0], cur.take(blk.mixing.omega.len()).to_vec()));
        let res = cur.take(blk.residual.n_params()).to_vec();
        bps.push(Bp {
            lambda,
            eta,
            inner,
            outer,
            mix,
            res,
        });
    }
    let mut bn_params: Vec<Option<(Vec<T>, Vec<T>)>> = Vec::new();
    for bn in &net.norms {
        bn_params.push(bn.as_ref().map(|bn| {
            let g = cur.take(bn.gamma.len()).to_vec();
            let be = cur.take(bn.beta.len()).to_vec();
            (g, be)
        }));
    }
    let head = net.head.map(|_| {
        let s = cur.take(2);
        (s[0], s[1])
    });
    assert_eq!(cur.at, params.len(), "parameter vector fully consumed");

    let normalize = |h: &mut Vec<Vec<T>>, l: usize| {
        let (g, be) = bn_params[l].as_ref().unwrap();
        let bn = net.norms[l].as_ref().unwrap();
        let d = g.len();
        for j in 0..d {
            let (mean, var) = if batch_stats {
                let m = h.iter().fold(T::of(0.0), |a, r| a + r[j]) / T::of(b as f64);
                let v = h
                    .iter()
                    .fold(T::of(0.0), |a, r| a + (r[j] - m) * (r[j] - m))
                    / T::of(b as f64);
                (m, v)
            } else {
                (T::of(bn.running_mean[j]), T::of(bn.running_var[j]))
            };
            let inv = T::of(1.0) / (var + T::of(bn.eps)).sqrt();
            for r in h.iter_mut() {
                r[j] = g[j] * (r[j] - mean) * inv + be[j];
            }
        }
    };

    for (l, (blk, bp)) in net.blocks.iter().zip(&bps).enumerate() {
        if net.bn_placement == BnPlacement::Before && bn_params[l].is_some() {
            normalize(&mut h, l);
        }
        let (n, m) = (blk.d_in, blk.d_out);
        let mut next = Vec::with_capacity(b);
        for row in &h {
            let s: Vec<T> = (0..m)
                .map(|q| {
                    let qv = T::of(blk.q_grid[q]);
                    let mut acc = T::of(0.0);
                    for i in 0..n {
                        acc = acc + bp.lambda[i] * bp.inner.eval(row[i] + bp.eta * qv);
                    }
                    acc + T::of(blk.alpha) * qv
                })
                .collect();
            let mixed: Vec<T> = match (&bp.mix, blk.mixing.topology) {
                (Some((tau, w)), Topology::Cyclic) => (0..m)
                    .map(|q| s[q] + *tau * w[q] * s[(q + 1) % m])
                    .collect(),
                (Some((tau, w)), Topology::Bidirectional) => (0..m)
                    .map(|q| s[q] + *tau * (w[q] * s[(q + 1) % m] + w[m + q] * s[(q + m - 1) % m]))
                    .collect(),
                _ => s,
            };
            let mut out: Vec<T> = mixed.iter().map(|&v| bp.outer.eval(v)).collect();
            match &blk.residual {
                Residual::None => {}
                Residual::Scalar(_) => (0..m).for_each(|q| out[q] = out[q] + bp.res[0] * row[q]),
                Residual::Broadcast(_) => {
                    (0..m).for_each(|q| out[q] = out[q] + bp.res[q] * row[q % n])
                }
                Residual::Pool(_) => {
                    (0..n).for_each(|i| out[i % m] = out[i % m] + bp.res[i] * row[i])
                }
                Residual::Linear(_) => {
                    for i in 0..n {
                        for q in 0..m {
                            out[q] = out[q] + row[i] * bp.res[i * m + q];
                        }
                    }
                }
            }
            next.push(out);
        }
        h = next;
        if net.bn_placement == BnPlacement::After && bn_params[l].is_some() {
            normalize(&mut h, l);
        }
    }
    if net.arch.output_mode == OutputMode::SummedScalar {
        h = h
            .into_iter()
            .map(|r| vec![r.iter().copied().fold(T::of(0.0), |a, v| a + v)])
            .collect();
    }
    if let Some((s, bias)) = head {
        for r in h.iter_mut() {
            for v in r.iter_mut() {
                *v = s * *v + bias;
            }
        }
    }
    h
}

pub fn mse<T: Real>(pred: &[Vec<T>], y: &Array2<f64>) -> T {
    let mut acc = T::of(0.0);
    let mut n = 0;
    for (r, row) in pred.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let e = v - T::of(y[[r, j]]);
            acc = acc + e * e;
            n += 1;
        }
    }
    acc / T::of(n as f64)
}

pub fn cross_entropy<T: Real>(pred: &[Vec<T>], labels: &[usize]) -> T {
    let mut acc = T::of(0.0);
    for (row, &l) in pred.iter().zip(labels) {
        let m = row.iter().copied().fold(row[0], |a, v| a.max(v));
        let z = row.iter().fold(T::of(0.0), |a, &v| a + (v - m).exp());
        acc = acc + m + z.ln() - row[l];
    }
    acc / T::of(pred.len() as f64)
}
