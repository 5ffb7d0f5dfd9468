//! Network architecture, construction and evaluation.

mod arch;
mod config;
mod counts;
mod lan;
mod net;

pub use arch::{Architecture, OutputMode};
pub use config::{BnPlacement, HeadInit, NetConfig, Nonlinearity};
pub use counts::{baseline_param_count, sprecher_minimal_count, Baseline};
pub use lan::{lan_expand_check, LanExpansion};
pub(crate) use net::NetCache;
pub use net::{BlockTrace, Head, SprecherNetwork};
