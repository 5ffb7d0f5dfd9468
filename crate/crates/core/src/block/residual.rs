use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual family requested by configuration, resolved against block
/// dimensions by [`Residual::build`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualKind {
    #[default]
    None,
    /// Scalar, broadcast or pool depending on dimensions.
    Cyclic,
    /// Scalar when dimensions match, otherwise a full projection.
    Linear,
}

/// Skip connection added after the outer spline.
#[derive(Debug, Clone, PartialEq)]
pub enum Residual {
    None,
    /// `r_q = w x_q`; requires `d_in == d_out`.
    Scalar(f64),
    /// `r_q = w_q x_{q mod d_in}`; requires `d_in < d_out`.
    Broadcast(Vec<f64>),
    /// `r_q = Σ_{i mod d_out = q} w_i x_i`; requires `d_in > d_out`.
    Pool(Vec<f64>),
    /// `r = xᵀ W` with `W` of shape `d_in × d_out`.
    Linear(Array2<f64>),
}

impl Residual {
    /// Resolves `kind` for the given dimensions with every weight set to
    /// `init`. Linear projections start at `init` on the cyclic assignment
    /// pattern and zero elsewhere.
    pub fn build(kind: ResidualKind, d_in: usize, d_out: usize, init: f64) -> Residual {
        match kind {
            ResidualKind::None => Residual::None,
            ResidualKind::Cyclic => Residual::cyclic(d_in, d_out, init),
            ResidualKind::Linear if d_in == d_out => Residual::Scalar(init),
            ResidualKind::Linear => {
                let mut w = Array2::zeros((d_in, d_out));
                for i in 0..d_in.max(d_out) {
                    w[[i % d_in, i % d_out]] = init;
                }
                Residual::Linear(w)
            }
        }
    }

    pub fn cyclic(d_in: usize, d_out: usize, init: f64) -> Residual {
        use std::cmp::Ordering::*;
        match d_in.cmp(&d_out) {
            Equal => Residual::Scalar(init),
            Less => Residual::Broadcast(vec![init; d_out]),
            Greater => Residual::Pool(vec![init; d_in]),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Residual::None => "none",
            Residual::Scalar(_) => "scalar",
            Residual::Broadcast(_) => "broadcast",
            Residual::Pool(_) => "pool",
            Residual::Linear(_) => "linear",
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Residual::None)
    }

    pub fn validate(&self, d_in: usize, d_out: usize) -> Result<()> {
        let ok = match self {
            Residual::None => true,
            Residual::Scalar(_) => d_in == d_out,
            Residual::Broadcast(w) => d_in < d_out && w.len() == d_out,
            Residual::Pool(w) => d_in > d_out && w.len() == d_in,
            Residual::Linear(w) => w.dim() == (d_in, d_out),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ResidualShape {
                kind: self.name(),
                d_in,
                d_out,
            })
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Residual::None => 0,
            Residual::Scalar(_) => 1,
            Residual::Broadcast(w) | Residual::Pool(w) => w.len(),
            Residual::Linear(w) => w.len(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Residual::None => vec![],
            Residual::Scalar(w) => vec![*w],
            Residual::Broadcast(w) | Residual::Pool(w) => w.clone(),
            Residual::Linear(w) => w.iter().copied().collect(),
        }
    }

    pub fn set_params(&mut self, p: &[f64]) {
        match self {
            Residual::None => {}
            Residual::Scalar(w) => *w = p[0],
            Residual::Broadcast(w) | Residual::Pool(w) => w.copy_from_slice(p),
            Residual::Linear(w) => {
                for (a, b) in w.iter_mut().zip(p) {
                    *a = *b;
                }
            }
        }
    }

    /// Adds the residual of one sample into `out`.
    #[inline]
    pub(crate) fn add_row(&self, x: &[f64], out: &mut [f64]) {
        let d_in = x.len();
        let d_out = out.len();
        match self {
            Residual::None => {}
            Residual::Scalar(w) => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o += w * xi;
                }
            }
            Residual::Broadcast(w) => {
                for q in 0..d_out {
                    out[q] += w[q] * x[q % d_in];
                }
            }
            Residual::Pool(w) => {
                for i in 0..d_in {
                    out[i % d_out] += w[i] * x[i];
                }
            }
            Residual::Linear(w) => {
                for i in 0..d_in {
                    let xi = x[i];
                    for (o, wiq) in out.iter_mut().zip(w.row(i)) {
                        *o += xi * wiq;
                    }
                }
            }
        }
    }

    /// Backward of [`add_row`](Self::add_row): adds into `dx` and `dw`
    /// (flattened in parameter order).
    #[inline]
    pub(crate) fn backward_row(&self, x: &[f64], dout: &[f64], dx: &mut [f64], dw: &mut [f64]) {
        let d_in = x.len();
        let d_out = dout.len();
        match self {
            Residual::None => {}
            Residual::Scalar(w) => {
                for q in 0..d_out {
                    dx[q] += w * dout[q];
                    dw[0] += dout[q] * x[q];
                }
            }
            Residual::Broadcast(w) => {
                for q in 0..d_out {
                    dx[q % d_in] += w[q] * dout[q];
                    dw[q] += dout[q] * x[q % d_in];
                }
            }
            Residual::Pool(w) => {
                for i in 0..d_in {
                    dx[i] += w[i] * dout[i % d_out];
                    dw[i] += dout[i % d_out] * x[i];
                }
            }
            Residual::Linear(w) => {
                for i in 0..d_in {
                    let mut acc = 0.0;
                    for q in 0..d_out {
                        acc += w[[i, q]] * dout[q];
                        dw[i * d_out + q] += x[i] * dout[q];
                    }
                    dx[i] += acc;
                }
            }
        }
    }

    /// Infinity-norm operator bound `max_q Σ_i |∂r_q/∂x_i|`.
    pub fn inf_norm(&self, d_out: usize) -> f64 {
        match self {
            Residual::None => 0.0,
            Residual::Scalar(w) => w.abs(),
            Residual::Broadcast(w) => w.iter().fold(0.0, |m, v| m.max(v.abs())),
            Residual::Pool(w) => {
                let mut sums = vec![0.0; d_out];
                for (i, wi) in w.iter().enumerate() {
                    sums[i % d_out] += wi.abs();
                }
                sums.into_iter().fold(0.0, f64::max)
            }
            Residual::Linear(w) => (0..d_out)
                .map(|q| w.column(q).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }
}
