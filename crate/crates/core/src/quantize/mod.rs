//! Q16.16 fixed-point inference and the binary model format.
//!
//! A trained network is first folded into piecewise-linear tables with
//! normalization, codomain and mixing reduced to constants
//! ([`fold`]). The same folded structure runs in `f64` or in integers.
//!
//! ```
//! use sprecher::quantize::{q_forward, quantize_model, Q16};
//! # let net = sprecher::quantize::identity_network();
//! let q = quantize_model(&net).unwrap();
//! let y = q_forward(&q, &[Q16::from_f64(0.25)]);
//! assert!((y[0].to_f64() - 0.25).abs() < 1e-3);
//! ```

mod fixed;
mod format;
mod model;

pub use fixed::{from_fixed, q_add, q_mul, q_sub, to_fixed, Q16};
pub use format::{
    load_network, load_quantized, save_network, save_quantized, Model, Precision, MAGIC, VERSION,
};
pub use model::{
    fold, identity_network, q_forward, quantize_model, with_running_stats, Affine, FoldedBlock,
    FoldedModel, FoldedResidual, Pwl, QuantizedModel, Scalar, PCHIP_REFINE,
};
