use serde::{Deserialize, Serialize};

use crate::block::{BnMode, QGridStyle, ResidualKind, Topology};
use crate::error::{Error, Result};
use crate::splines::SplineKind;

/// Family of univariate maps used inside blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    /// Monotone inner spline and general outer spline.
    #[default]
    Spline,
    /// One-parameter PReLU for both maps.
    Prelu,
}

/// Where normalization layers sit relative to blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnPlacement {
    #[default]
    None,
    /// Normalizes each block's input.
    Before,
    /// Normalizes each block's output, except the final block.
    After,
}

/// Output head initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInit {
    #[default]
    None,
    /// `scale = 0.1`, `bias = mean target`.
    Regression,
    /// `scale = 1`, `bias = 0`.
    Unit,
}

/// Every construction option of a network. Loadable from TOML; missing keys
/// take their defaults.
///
/// ```
/// use sprecher::network::NetConfig;
///
/// let cfg = NetConfig::from_toml_str(r#"
///     phi_knots = 12
///     mixing = "cyclic"
///     residual = "cyclic"
/// "#).unwrap();
/// assert_eq!(cfg.phi_knots, 12);
/// assert_eq!(cfg.outer_knots, NetConfig::default().outer_knots);
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub nonlinearity: Nonlinearity,
    pub phi_kind: SplineKind,
    pub outer_kind: SplineKind,
    pub phi_knots: usize,
    pub outer_knots: usize,
    /// Learnable output window on the outer spline.
    pub codomain: bool,
    pub mixing: Topology,
    pub tau_init: f64,
    pub omega_init: f64,
    pub residual: ResidualKind,
    pub residual_init: f64,
    pub bn: BnPlacement,
    pub bn_skip_first: bool,
    /// Normalization statistics used outside training steps.
    pub bn_eval: BnMode,
    pub q_grid: QGridStyle,
    pub alpha: f64,
    pub head: HeadInit,
    /// Use an output block even when `d_out == 1`.
    pub output_block: bool,
    /// Relative margin added around propagated spline domains.
    pub margin: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            nonlinearity: Nonlinearity::Spline,
            phi_kind: SplineKind::Pwl,
            outer_kind: SplineKind::Pwl,
            phi_knots: 30,
            outer_knots: 30,
            codomain: false,
            mixing: Topology::None,
            tau_init: 0.1,
            omega_init: 0.01,
            residual: ResidualKind::None,
            residual_init: 0.1,
            bn: BnPlacement::None,
            bn_skip_first: true,
            bn_eval: BnMode::EvalBatchStatsFrozen,
            q_grid: QGridStyle::Index,
            alpha: 1.0,
            head: HeadInit::None,
            output_block: false,
            margin: 0.10,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: NetConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.nonlinearity == Nonlinearity::Spline && (self.phi_knots < 2 || self.outer_knots < 2)
        {
            return Err(Error::Config("splines need at least 2 knots".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("margin must be non-negative".into()));
        }
        if self.bn_eval == BnMode::TrainBatchStats {
            return Err(Error::Config("bn_eval cannot be train_batch_stats".into()));
        }
        Ok(())
    }
}
