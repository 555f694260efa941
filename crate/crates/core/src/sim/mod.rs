//! Reference executors: an integer convolution checking the split
//! binary + sparse-residual computation, and a loop-nest traffic counter
//! checking the analytic cost model.

mod conv;
mod traffic;
mod verify;

pub use conv::{
    direct_conv, int_weights, mixed_conv, AccTensor, FixedPoint, IntWeights, QuantTensor,
};
pub use traffic::{
    full_reuse_offchip, traffic_sim, LayerCounters, Scheme, TrafficReport, COUNTER_HEADER,
};
pub use verify::{check_case, random_case, verify_layers, verify_random, ConvCase, VerifyOutcome};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("scale {value} does not fit 16-bit fixed point with {frac_bits} fractional bits")]
    ScaleRange { value: f32, frac_bits: u32 },
    #[error("activation {value} at index {index} outside signed {bits}-bit range")]
    Activation { value: i32, index: usize, bits: u32 },
    #[error("accumulator {value} at (y={y}, x={x}, m={m}) overflows {q_s} bits")]
    Overflow { y: usize, x: usize, m: usize, value: i64, q_s: u32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Sparse(#[from] crate::sparse::SparseError),
}
