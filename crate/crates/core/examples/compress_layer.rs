//! Mixed 1/8-bit quantization and block-sparse encoding of one layer.
//!
//! Quantizes a random 3x3x64x128 layer at several ratios and reports the
//! reconstruction error, the encoded size and the sparse-kernel sizing.

use mixdse::quant::{compression_rate, quantize_layer_with, reconstruct, QuantOptions, Selection, WeightTensor};
use mixdse::sparse::{decode, dense_size, encode, encoded_size, kernel_stats, DEFAULT_COORD_BITS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (m, n, k) = (128u32, 64u32, 3u32);
    let data: Vec<f32> = (0..m * n * k * k)
        .map(|_| (0..4).map(|_| rng.gen_range(-0.05f32..0.05)).sum())
        .collect();
    let tensor = WeightTensor { layer_id: 1, m, n, k, data };
    let params = tensor.data.len() as u64;

    println!("selection,p,nnz,rmse,dense_bytes,sparse_bytes,bits_per_weight,compression,n_multipliers,tree_size");
    for selection in [Selection::ChannelWise, Selection::LayerWise] {
        for p in [0.0, 0.01, 0.05, 0.1, 0.25] {
            let opts = QuantOptions { selection, ..QuantOptions::default() };
            let mixed = quantize_layer_with(&tensor, p, opts)?;
            let back = reconstruct(&mixed);
            let mse = tensor.data.iter().zip(&back).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / params as f64;
            let enc = encode(&mixed, 16, 16, DEFAULT_COORD_BITS)?;
            assert_eq!(decode(&enc)?, mixed);
            let stats = kernel_stats(&enc)?;
            let bytes = dense_size(&enc) + encoded_size(&enc);
            println!(
                "{selection:?},{p},{},{:.5},{},{},{:.3},{:.2},{},{}",
                mixed.nnz(),
                mse.sqrt(),
                dense_size(&enc),
                encoded_size(&enc),
                8.0 * bytes as f64 / params as f64,
                compression_rate(p, params, params),
                stats.n_multipliers,
                stats.tree_size
            );
        }
    }
    Ok(())
}
