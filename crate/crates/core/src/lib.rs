//! Design-space exploration and mixed-precision weight compression for
//! streaming CNN accelerators.
//!
//! The crate is organised around the pieces of a mixed-dataflow accelerator
//! design flow:
//!
//! - [`net`]: layer/network descriptions, parsed from JSON.
//! - [`cost`]: analytic on-chip buffer, DRAM traffic and timing model.
//! - [`dse`]: tiling-factor propagation, group-boundary search and sweeps.
//! - [`quant`]: channel-wise mixed 1-bit/8-bit weight quantization.
//! - [`gp`]: Gaussian-process UCB search for per-layer high-precision ratios.
//! - [`sparse`]: bit-exact block-sparse weight format and kernel sizing.
//! - [`sim`]: integer convolution and loop-nest traffic oracles.
//! - [`cli`]: the command implementations behind the `mixdse` binary.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod cost;
pub mod dse;
pub mod error;
pub mod gp;
pub mod net;
pub mod quant;
pub mod rational;
pub mod sim;
pub mod sparse;

pub use cost::{BufferSizes, CostModel, CostReport, Group, ParamBits};
pub use dse::{DseConfig, MultiplierModel, SweepRow, Tile, TilingPlan};
pub use error::Error;
pub use net::{LayerDesc, LayerKind, NetworkDesc, Precision};
pub use rational::Rational;
