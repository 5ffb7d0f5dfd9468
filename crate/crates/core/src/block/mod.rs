//! The block operator `h_q = Φ(s̃_q) + r_q(x)` and its gradients.

mod batchnorm;
mod mixing;
mod residual;

pub(crate) use batchnorm::BnCache;
pub use batchnorm::{BatchNorm, BnGrad, BnMode};
pub use mixing::{Mixing, Topology};
pub use residual::{Residual, ResidualKind};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splines::{InnerEval, InnerFn, OuterFn};

/// Evaluation schedule for the shift-and-sum stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Materializes every shifted input `x_i + η q` at once
    /// (`batch × d_out × d_in` values).
    Parallel,
    /// Walks output indices in chunks, holding one shifted row at a time.
    Sequential { chunk: usize },
}

impl Default for ForwardMode {
    fn default() -> Self {
        ForwardMode::Sequential { chunk: 1 }
    }
}

/// Placement of the fixed output coordinates `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QGridStyle {
    /// `0, 1, ..., d_out - 1`.
    #[default]
    Index,
    /// Uniform on `[-1, 1]`.
    Symmetric,
}

impl QGridStyle {
    pub fn grid(&self, d_out: usize) -> Vec<f64> {
        match self {
            QGridStyle::Index => (0..d_out).map(|q| q as f64).collect(),
            QGridStyle::Symmetric if d_out == 1 => vec![0.0],
            QGridStyle::Symmetric => (0..d_out)
                .map(|q| -1.0 + 2.0 * q as f64 / (d_out - 1) as f64)
                .collect(),
        }
    }
}

/// Which parameter groups [`SprecherBlock::param_count`] includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamFlags {
    pub splines: bool,
    pub mixing: bool,
    pub residual: bool,
}

impl ParamFlags {
    pub const ALL: ParamFlags = ParamFlags {
        splines: true,
        mixing: true,
        residual: true,
    };
}

/// One shift-and-sum block.
#[derive(Debug, Clone, PartialEq)]
pub struct SprecherBlock {
    pub d_in: usize,
    pub d_out: usize,
    pub lambda: Vec<f64>,
    pub eta: f64,
    /// Fixed spacing multiplier on `q`; not trained.
    pub alpha: f64,
    /// Fixed output coordinates; not trained.
    pub q_grid: Vec<f64>,
    pub phi: InnerFn,
    pub outer: OuterFn,
    pub mixing: Mixing,
    pub residual: Residual,
}

/// Gradient of the loss with respect to one block's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrad {
    pub lambda: Vec<f64>,
    pub eta: f64,
    pub phi: Vec<f64>,
    /// Outer spline ordinates followed by codomain center and radius.
    pub outer: Vec<f64>,
    /// `None` when the block has no mixing.
    pub tau: Option<f64>,
    pub omega: Vec<f64>,
    pub residual: Vec<f64>,
}

impl BlockGrad {
    /// Same order as [`SprecherBlock::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.lambda.clone();
        v.push(self.eta);
        v.extend_from_slice(&self.phi);
        v.extend_from_slice(&self.outer);
        if let Some(t) = self.tau {
            v.push(t);
            v.extend_from_slice(&self.omega);
        }
        v.extend_from_slice(&self.residual);
        v
    }
}

/// Activations kept for the backward pass: `O(batch · (d_in + d_out))`.
#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    pub x: Array2<f64>,
    pub s: Array2<f64>,
    pub mixed: Array2<f64>,
}

/// Dot product with eight independent accumulators.
///
/// Every schedule sums through this function so results match bit for bit.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Writes `φ(x_i + shift)` into `out`.
#[inline]
fn shifted_values(phi: &InnerEval, x: &[f64], shift: f64, out: &mut [f64]) {
    match phi {
        InnerEval::Prelu(a) => {
            let a = *a;
            for (o, xi) in out.iter_mut().zip(x) {
                let z = xi + shift;
                *o = if z >= 0.0 { z } else { a * z };
            }
        }
        InnerEval::Spline(s) => {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = s.value(xi + shift);
            }
        }
    }
}

fn check_input(x: &Array2<f64>, d_in: usize) -> Result<()> {
    if x.ncols() != d_in {
        return Err(Error::DimensionMismatch {
            what: "block input",
            expected: d_in,
            found: x.ncols(),
        });
    }
    Ok(())
}

impl SprecherBlock {
    /// Block with `λ_i = 1/d_in`, `η = 1/d_out`, `α = 1`, index q-grid and
    /// no mixing or residual.
    pub fn new(d_in: usize, d_out: usize, phi: InnerFn, outer: OuterFn) -> Self {
        SprecherBlock {
            d_in,
            d_out,
            lambda: vec![1.0 / d_in as f64; d_in],
            eta: 1.0 / d_out as f64,
            alpha: 1.0,
            q_grid: QGridStyle::Index.grid(d_out),
            phi,
            outer,
            mixing: Mixing::none(),
            residual: Residual::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mismatch = |what, expected, found| Error::DimensionMismatch {
            what,
            expected,
            found,
        };
        if self.lambda.len() != self.d_in {
            return Err(mismatch("lambda", self.d_in, self.lambda.len()));
        }
        if self.q_grid.len() != self.d_out {
            return Err(mismatch("q grid", self.d_out, self.q_grid.len()));
        }
        if self.q_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("q grid must be strictly increasing".into()));
        }
        self.mixing.validate(self.d_out)?;
        self.residual.validate(self.d_in, self.d_out)
    }

    pub fn q_min(&self) -> f64 {
        self.q_grid[0]
    }

    pub fn q_max(&self) -> f64 {
        self.q_grid[self.d_out - 1]
    }

    pub fn param_count(&self, include: ParamFlags) -> usize {
        let mut n = self.d_in + 1;
        if include.splines {
            n += self.phi.n_params() + self.outer.n_params();
        }
        if include.mixing {
            n += self.mixing.n_params();
        }
        if include.residual {
            n += self.residual.n_params();
        }
        n
    }

    pub fn n_params(&self) -> usize {
        self.param_count(ParamFlags::ALL)
    }

    /// Trainable parameters: `λ, η, φ, Φ (+ codomain), τ, ω, residual`.
    pub fn params(&self) -> Vec<f64> {
        let mut v = self.lambda.clone();
        v.push(self.eta);
        v.extend(self.phi.params());
        v.extend(self.outer.params());
        if !self.mixing.is_none() {
            v.push(self.mixing.tau);
            v.extend_from_slice(&self.mixing.omega);
        }
        v.extend(self.residual.params());
        v
    }

    /// Inverse of [`params`](Self::params).
    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &p[at..at + n];
            at += n;
            s
        };
        self.lambda.copy_from_slice(take(self.d_in));
        self.eta = take(1)[0];
        let n = self.phi.n_params();
        self.phi.set_params(take(n));
        let n = self.outer.n_params();
        self.outer.set_params(take(n));
        if !self.mixing.is_none() {
            self.mixing.tau = take(1)[0];
            let n = self.mixing.omega.len();
            self.mixing.omega.copy_from_slice(take(n));
        }
        let n = self.residual.n_params();
        self.residual.set_params(take(n));
    }

    /// Unmixed pre-activations `s_q = Σ_i λ_i φ(x_i + η q) + α q`.
    pub fn unmixed_preactivations(
        &self,
        x: &Array2<f64>,
        mode: ForwardMode,
    ) -> Result<Array2<f64>> {
        self.validate()?;
        check_input(x, self.d_in)?;
        let x = x.as_standard_layout();
        let phi = self.phi.prepare();
        let b = x.nrows();
        let mut s = Array2::zeros((b, self.d_out));
        match mode {
            ForwardMode::Parallel => {
                let (di, dq) = (self.d_in, self.d_out);
                let mut shifted = vec![0.0; b * dq * di];
                for (r, xr) in x.rows().into_iter().enumerate() {
                    for q in 0..dq {
                        let shift = self.eta * self.q_grid[q];
                        let base = (r * dq + q) * di;
                        for i in 0..di {
                            shifted[base + i] = xr[i] + shift;
                        }
                    }
                }
                match &phi {
                    InnerEval::Prelu(a) => {
                        for z in shifted.iter_mut() {
                            *z = if *z >= 0.0 { *z } else { a * *z };
                        }
                    }
                    InnerEval::Spline(sp) => {
                        for z in shifted.iter_mut() {
                            *z = sp.value(*z);
                        }
                    }
                }
                for r in 0..b {
                    for q in 0..dq {
                        let base = (r * dq + q) * di;
                        s[[r, q]] = dot(&self.lambda, &shifted[base..base + di])
                            + self.alpha * self.q_grid[q];
                    }
                }
            }
            ForwardMode::Sequential { chunk } => {
                let chunk = chunk.max(1);
                let mut row = vec![0.0; self.d_in];
                let mut q0 = 0;
                while q0 < self.d_out {
                    let q1 = (q0 + chunk).min(self.d_out);
                    for (r, xr) in x.rows().into_iter().enumerate() {
                        let xr = xr.as_slice().expect("standard layout");
                        for q in q0..q1 {
                            shifted_values(&phi, xr, self.eta * self.q_grid[q], &mut row);
                            s[[r, q]] = dot(&self.lambda, &row) + self.alpha * self.q_grid[q];
                        }
                    }
                    q0 = q1;
                }
            }
        }
        Ok(s)
    }

    /// Pre-activations after lateral mixing.
    pub fn preactivations(&self, x: &Array2<f64>, mode: ForwardMode) -> Result<Array2<f64>> {
        let s = self.unmixed_preactivations(x, mode)?;
        Ok(self.mix(&s))
    }

    fn mix(&self, s: &Array2<f64>) -> Array2<f64> {
        if self.mixing.is_none() {
            return s.clone();
        }
        let mut out = Array2::zeros(s.dim());
        for (sr, mut orow) in s.rows().into_iter().zip(out.rows_mut()) {
            self.mixing.apply_row(
                sr.as_slice().expect("standard layout"),
                orow.as_slice_mut().expect("standard layout"),
            );
        }
        out
    }

    pub fn residual_term(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.residual.validate(self.d_in, self.d_out)?;
        check_input(x, self.d_in)?;
        let x = x.as_standard_layout();
        let mut r = Array2::zeros((x.nrows(), self.d_out));
        for (xr, mut rr) in x.rows().into_iter().zip(r.rows_mut()) {
            self.residual.add_row(
                xr.as_slice().expect("standard layout"),
                rr.as_slice_mut().expect("standard layout"),
            );
        }
        Ok(r)
    }

    pub fn forward(&self, x: &Array2<f64>, mode: ForwardMode) -> Result<Array2<f64>> {
        self.forward_cached(x, mode).map(|(h, _)| h)
    }

    pub(crate) fn forward_cached(
        &self,
        x: &Array2<f64>,
        mode: ForwardMode,
    ) -> Result<(Array2<f64>, BlockCache)> {
        let s = self.unmixed_preactivations(x, mode)?;
        let mixed = self.mix(&s);
        let outer = self.outer.prepare();
        let x = x.as_standard_layout().into_owned();
        let mut h = mixed.mapv(|v| outer.value(v));
        for (xr, mut hr) in x.rows().into_iter().zip(h.rows_mut()) {
            self.residual.add_row(
                xr.as_slice().expect("standard layout"),
                hr.as_slice_mut().expect("standard layout"),
            );
        }
        Ok((h, BlockCache { x, s, mixed }))
    }

    /// Gradient with respect to the block input and parameters, given the
    /// upstream gradient `dh`. The shifted tensor is recomputed row by row.
    pub(crate) fn backward(
        &self,
        cache: &BlockCache,
        dh: &Array2<f64>,
    ) -> (Array2<f64>, BlockGrad) {
        let b = cache.x.nrows();
        let (di, dq) = (self.d_in, self.d_out);
        let phi = self.phi.prepare();
        let outer = self.outer.prepare();
        let mut phi_grad = phi.grad_buffer();
        let mut outer_grad = outer.grad_buffer();
        let mut dx = Array2::zeros((b, di));
        let mut dres = vec![0.0; self.residual.n_params()];
        let mut dtau = 0.0;
        let mut domega = vec![0.0; self.mixing.omega.len()];
        let mut dlam = vec![0.0; di];
        let mut deta_lanes = vec![0.0; di];
        let mut dslope_lanes = vec![0.0; di];
        let mut dmixed = vec![0.0; dq];
        let mut ds = vec![0.0; dq];

        for r in 0..b {
            let xr = cache.x.row(r);
            let xr = xr.as_slice().expect("standard layout");
            let dhr = dh.row(r);
            let dhr = dhr.as_slice().expect("standard layout");
            let dxr = &mut dx.row_mut(r);
            let dxr = dxr.as_slice_mut().expect("standard layout");
            self.residual.backward_row(xr, dhr, dxr, &mut dres);

            for q in 0..dq {
                let m = cache.mixed[[r, q]];
                let g = dhr[q];
                dmixed[q] = g * outer.value_deriv(m).1;
                outer.accumulate(m, g, &mut outer_grad);
            }
            let sr = cache.s.row(r);
            self.mixing.backward_row(
                sr.as_slice().expect("standard layout"),
                &dmixed,
                &mut ds,
                &mut dtau,
                &mut domega,
            );

            for q in 0..dq {
                let g = ds[q];
                if g == 0.0 {
                    continue;
                }
                let qv = self.q_grid[q];
                let shift = self.eta * qv;
                match &phi {
                    InnerEval::Prelu(a) => {
                        let a = *a;
                        for i in 0..di {
                            let z = xr[i] + shift;
                            let neg = z < 0.0;
                            let v = if neg { a * z } else { z };
                            let d = if neg { a } else { 1.0 };
                            let gl = g * self.lambda[i];
                            dlam[i] += g * v;
                            let t = gl * d;
                            dxr[i] += t;
                            deta_lanes[i] += t * qv;
                            dslope_lanes[i] += if neg { gl * z } else { 0.0 };
                        }
                    }
                    InnerEval::Spline(sp) => {
                        for i in 0..di {
                            let z = xr[i] + shift;
                            let gl = g * self.lambda[i];
                            let (v, d) = sp.value_deriv(z);
                            dlam[i] += g * v;
                            let t = gl * d;
                            dxr[i] += t;
                            deta_lanes[i] += t * qv;
                            sp.accumulate(z, gl, &mut phi_grad);
                        }
                    }
                }
            }
        }
        if let InnerEval::Prelu(_) = phi {
            phi_grad.dy[0] = dslope_lanes.iter().sum();
        }
        let grad = BlockGrad {
            lambda: dlam,
            eta: deta_lanes.iter().sum(),
            phi: self.phi.finish_grad(&phi, &phi_grad),
            outer: self.outer.finish_grad(&outer, &outer_grad),
            tau: if self.mixing.is_none() {
                None
            } else {
                Some(dtau)
            },
            omega: domega,
            residual: dres,
        };
        (dx, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splines::{GeneralSpline, KnotGrid, MonotoneSpline, SplineKind};
    use ndarray::array;

    fn ramp(lo: f64, hi: f64) -> InnerFn {
        InnerFn::Spline(MonotoneSpline::identity_ramp(
            KnotGrid::new(lo, hi, 11).unwrap(),
            SplineKind::Pwl,
        ))
    }

    fn identity_outer(lo: f64, hi: f64) -> OuterFn {
        OuterFn::Spline(GeneralSpline::identity(
            KnotGrid::new(lo, hi, 5).unwrap(),
            SplineKind::Pwl,
        ))
    }

    #[test]
    fn zero_lambda_leaves_alpha_q() {
        let mut blk = SprecherBlock::new(2, 3, ramp(0.0, 1.0), identity_outer(0.0, 2.0));
        blk.lambda = vec![0.0, 0.0];
        let s = blk
            .preactivations(&array![[0.3, 0.9], [0.1, 0.2]], ForwardMode::default())
            .unwrap();
        assert_eq!(s, array![[0.0, 1.0, 2.0], [0.0, 1.0, 2.0]]);
        let h = blk
            .forward(&array![[0.3, 0.9]], ForwardMode::Parallel)
            .unwrap();
        assert!((h[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_input_hand_evaluation() {
        // Shifted inputs 0.2 and 0.7 stay inside the ramp's [0, 1] domain.
        let mut blk = SprecherBlock::new(1, 2, ramp(0.0, 1.0), identity_outer(0.0, 2.0));
        blk.lambda = vec![2.0];
        blk.eta = 0.5;
        blk.alpha = 0.0;
        let s = blk
            .preactivations(&array![[0.2]], ForwardMode::default())
            .unwrap();
        assert!((s[[0, 0]] - 0.4).abs() < 1e-7 && (s[[0, 1]] - 1.4).abs() < 1e-7);
    }

    #[test]
    fn identity_block() {
        let mut blk = SprecherBlock::new(1, 1, ramp(0.0, 1.0), identity_outer(0.0, 1.0));
        blk.lambda = vec![1.0];
        blk.eta = 0.0;
        blk.alpha = 0.0;
        let h = blk
            .forward(&array![[0.0], [0.37], [1.0]], ForwardMode::default())
            .unwrap();
        for (a, b) in h.iter().zip([0.0, 0.37, 1.0]) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn cyclic_count_adds_tau_and_omega() {
        let mut blk = SprecherBlock::new(4, 10, ramp(0.0, 1.0), identity_outer(0.0, 1.0));
        let base = blk.n_params();
        blk.mixing = Mixing::uniform(Topology::Cyclic, 10, 0.1, 0.01);
        assert_eq!(blk.n_params(), base + 11);
    }

    #[test]
    fn symmetric_q_grid() {
        assert_eq!(QGridStyle::Symmetric.grid(3), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..19).map(|i| 1.0 - i as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
