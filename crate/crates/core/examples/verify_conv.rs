//! Bit-exact check of the split (binary + sparse) convolution against a
//! direct convolution with the same fixed-point weights.

use mixdse::sim::{verify_random, FixedPoint};
use mixdse::sim::{direct_conv, int_weights, mixed_conv, QuantTensor};
use mixdse::quant::{quantize_layer, WeightTensor};
use mixdse::sparse::{encode, DEFAULT_COORD_BITS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let out = verify_random(cases, 0)?;
    println!("random cases: {}/{} identical", out.passed, out.total);
    if let Some(f) = out.first_failure {
        println!("first mismatch: {f}");
    }

    // One larger layer, step by step.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (m, n, k, side) = (16u32, 8u32, 3u32, 12usize);
    let data = (0..m * n * k * k).map(|_| rng.gen_range(-0.3f32..0.3)).collect();
    let mixed = quantize_layer(&WeightTensor { layer_id: 1, m, n, k, data }, 0.1)?;
    let enc = encode(&mixed, 4, 8, DEFAULT_COORD_BITS)?;
    let acts = (0..side * side * n as usize).map(|_| rng.gen_range(-128..=127)).collect();
    let input = QuantTensor::new(side, side, n as usize, 8, acts)?;
    let fp = FixedPoint::default();
    let split = mixed_conv(&input, &enc, fp, 32)?;
    let direct = direct_conv(&input, &int_weights(&mixed, fp)?, 32)?;
    let peak = split.data.iter().map(|v| v.abs()).max().unwrap_or(0);
    println!(
        "{m}x{n}x{k}x{k} layer, {side}x{side} input: {} nonzero residuals, outputs equal: {}, peak |acc| = {peak}",
        mixed.nnz(),
        split == direct
    );
    Ok(())
}
