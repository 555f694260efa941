//! Randomized equivalence check between the split and the direct
//! convolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{direct_conv, int_weights, mixed_conv, FixedPoint, QuantTensor, SimError};
use crate::quant::{quantize_layer, WeightTensor};
use crate::sparse::{decode, encode, EncodedLayer, DEFAULT_COORD_BITS};

/// One randomized layer and input.
#[derive(Debug, Clone)]
pub struct ConvCase {
    pub input: QuantTensor,
    pub layer: EncodedLayer,
}

/// A random small layer with random weights, ratio and tiling, plus a
/// random 8-bit input.
pub fn random_case(rng: &mut impl Rng) -> ConvCase {
    let k = [1u32, 3, 5][rng.gen_range(0..3)];
    let (m, n) = (rng.gen_range(1..=6u32), rng.gen_range(1..=6u32));
    let (h, w) = (rng.gen_range(1..=6usize), rng.gen_range(1..=6usize));
    let len = (m * n * k * k) as usize;
    let data = (0..len).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    let tensor = WeightTensor { layer_id: 1, m, n, k, data };
    let p = rng.gen_range(0.0..=1.0);
    let mixed = quantize_layer(&tensor, p).expect("valid random tensor");
    let layer = encode(&mixed, rng.gen_range(1..=4), rng.gen_range(1..=4), DEFAULT_COORD_BITS).expect("small block");
    let acts = (0..h * w * n as usize).map(|_| rng.gen_range(-128..=127)).collect();
    let input = QuantTensor::new(h, w, n as usize, 8, acts).expect("8-bit range");
    ConvCase { input, layer }
}

/// Compares both paths on one case; `Ok(None)` when they agree.
pub fn check_case(case: &ConvCase, fp: FixedPoint, q_s: u32) -> Result<Option<String>, SimError> {
    let split = mixed_conv(&case.input, &case.layer, fp, q_s)?;
    let weights = int_weights(&decode(&case.layer)?, fp)?;
    let direct = direct_conv(&case.input, &weights, q_s)?;
    Ok(split
        .data
        .iter()
        .zip(&direct.data)
        .position(|(a, b)| a != b)
        .map(|i| {
            let (pix, m) = (i / split.m, i % split.m);
            format!(
                "layer {}x{}x{}x{} on {}x{} input: (y={}, x={}, m={m}) split {} vs direct {}",
                case.layer.m, case.layer.n, case.layer.k, case.layer.k, case.input.h, case.input.w,
                pix / split.w, pix % split.w, split.data[i], direct.data[i]
            )
        }))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyOutcome {
    pub passed: usize,
    pub total: usize,
    pub first_failure: Option<String>,
}

/// Runs `cases` seeded random cases.
pub fn verify_random(cases: usize, seed: u64) -> Result<VerifyOutcome, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fp = FixedPoint::default();
    let mut out = VerifyOutcome { passed: 0, total: cases, first_failure: None };
    for _ in 0..cases {
        match check_case(&random_case(&mut rng), fp, 32)? {
            None => out.passed += 1,
            Some(msg) => {
                out.first_failure.get_or_insert(msg);
            }
        }
    }
    Ok(out)
}

/// Checks each encoded layer against one random input.
pub fn verify_layers(layers: &[EncodedLayer], side: usize, seed: u64, q_s: u32) -> Result<VerifyOutcome, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fp = FixedPoint::default();
    let mut out = VerifyOutcome { passed: 0, total: layers.len(), first_failure: None };
    for layer in layers {
        let c = layer.n as usize;
        let acts = (0..side * side * c).map(|_| rng.gen_range(-128..=127)).collect();
        let case = ConvCase { input: QuantTensor::new(side, side, c, 8, acts)?, layer: layer.clone() };
        match check_case(&case, fp, q_s)? {
            None => out.passed += 1,
            Some(msg) => {
                out.first_failure.get_or_insert(format!("layer {}: {msg}", layer.layer_id));
            }
        }
    }
    Ok(out)
}
