//! Sprecher networks: shift-and-sum blocks built from two shared splines.
//!
//! A block maps `x ∈ R^{d_in}` to `h ∈ R^{d_out}` by
//! `h_q = Φ(Σ_i λ_i φ(x_i + η q) + α q) + r_q(x)`, where `φ` is a monotone
//! spline, `Φ` a general spline, `λ` a weight vector shared by every output,
//! and `r` an optional residual. Networks chain blocks, optionally with batch
//! normalization between them and a summed scalar output.
//!
//! The crate covers evaluation (parallel and sequential schedules), interval
//! domain propagation, exact gradients, Adam training, Q16.16 inference and
//! a binary model format.

pub mod block;
pub mod domains;
pub mod error;
pub mod network;
pub mod quantize;
pub mod splines;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/blocks.md")]
    mod blocks {}
    #[doc = include_str!("../../../book/src/splines.md")]
    mod splines {}
    #[doc = include_str!("../../../book/src/domains.md")]
    mod domains {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/quantize.md")]
    mod quantize {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
