use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neighbour structure for lateral mixing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    None,
    /// Output `q` reads `q + 1` (wrapping).
    Cyclic,
    /// Output `q` reads `q + 1` and `q - 1` (wrapping).
    Bidirectional,
}

impl Topology {
    pub fn omega_len(&self, d_out: usize) -> usize {
        match self {
            Topology::None => 0,
            Topology::Cyclic => d_out,
            Topology::Bidirectional => 2 * d_out,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Topology::None => "none",
            Topology::Cyclic => "cyclic",
            Topology::Bidirectional => "bidirectional",
        }
    }
}

/// Lateral mixing `s̃_q = s_q + τ Σ_j ω_{q,j} s_j` over unmixed `s`.
///
/// For bidirectional mixing `omega[q]` weights the forward neighbour and
/// `omega[d_out + q]` the backward one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixing {
    pub topology: Topology,
    pub tau: f64,
    pub omega: Vec<f64>,
}

impl Default for Mixing {
    fn default() -> Self {
        Mixing::none()
    }
}

impl Mixing {
    pub fn none() -> Self {
        Mixing {
            topology: Topology::None,
            tau: 0.0,
            omega: Vec::new(),
        }
    }

    /// Every weight set to `omega`.
    pub fn uniform(topology: Topology, d_out: usize, tau: f64, omega: f64) -> Self {
        Mixing {
            topology,
            tau,
            omega: vec![omega; topology.omega_len(d_out)],
        }
    }

    pub fn is_none(&self) -> bool {
        self.topology == Topology::None
    }

    pub fn n_params(&self) -> usize {
        match self.topology {
            Topology::None => 0,
            _ => 1 + self.omega.len(),
        }
    }

    pub fn validate(&self, d_out: usize) -> Result<()> {
        let expected = self.topology.omega_len(d_out);
        if self.topology != Topology::None && self.omega.len() != expected {
            return Err(Error::MixingShape {
                topology: self.topology.name(),
                expected,
                found: self.omega.len(),
            });
        }
        Ok(())
    }

    /// Mixes one sample's pre-activations.
    #[inline]
    pub(crate) fn apply_row(&self, s: &[f64], out: &mut [f64]) {
        let d = s.len();
        match self.topology {
            Topology::None => out.copy_from_slice(s),
            Topology::Cyclic => {
                for q in 0..d {
                    let next = if q + 1 == d { 0 } else { q + 1 };
                    out[q] = s[q] + self.tau * self.omega[q] * s[next];
                }
            }
            Topology::Bidirectional => {
                for q in 0..d {
                    let next = if q + 1 == d { 0 } else { q + 1 };
                    let prev = if q == 0 { d - 1 } else { q - 1 };
                    out[q] =
                        s[q] + self.tau * (self.omega[q] * s[next] + self.omega[d + q] * s[prev]);
                }
            }
        }
    }

    /// Backward of [`apply_row`](Self::apply_row): writes `ds` and adds
    /// into `dtau` / `domega`.
    #[inline]
    pub(crate) fn backward_row(
        &self,
        s: &[f64],
        dmixed: &[f64],
        ds: &mut [f64],
        dtau: &mut f64,
        domega: &mut [f64],
    ) {
        let d = s.len();
        ds.copy_from_slice(dmixed);
        match self.topology {
            Topology::None => {}
            Topology::Cyclic => {
                for q in 0..d {
                    let next = if q + 1 == d { 0 } else { q + 1 };
                    let g = dmixed[q];
                    ds[next] += g * self.tau * self.omega[q];
                    *dtau += g * self.omega[q] * s[next];
                    domega[q] += g * self.tau * s[next];
                }
            }
            Topology::Bidirectional => {
                for q in 0..d {
                    let next = if q + 1 == d { 0 } else { q + 1 };
                    let prev = if q == 0 { d - 1 } else { q - 1 };
                    let g = dmixed[q];
                    ds[next] += g * self.tau * self.omega[q];
                    ds[prev] += g * self.tau * self.omega[d + q];
                    *dtau += g * (self.omega[q] * s[next] + self.omega[d + q] * s[prev]);
                    domega[q] += g * self.tau * s[next];
                    domega[d + q] += g * self.tau * s[prev];
                }
            }
        }
    }

    /// Largest absolute row sum of the neighbour weights.
    pub fn omega_row_bound(&self, d_out: usize) -> f64 {
        match self.topology {
            Topology::None => 0.0,
            Topology::Cyclic => self.omega.iter().fold(0.0, |m, w| m.max(w.abs())),
            Topology::Bidirectional => (0..d_out)
                .map(|q| self.omega[q].abs() + self.omega[d_out + q].abs())
                .fold(0.0, f64::max),
        }
    }
}
