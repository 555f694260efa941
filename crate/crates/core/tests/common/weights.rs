use mixdse::quant::WeightTensor;
use rand::Rng;

/// Gaussian-ish random weights: sum of uniforms, scaled.
pub fn random_tensor(rng: &mut impl Rng, m: u32, n: u32, k: u32) -> WeightTensor {
    let len = (m * n * k * k) as usize;
    let data = (0..len)
        .map(|_| (0..4).map(|_| rng.gen_range(-0.5f32..0.5)).sum::<f32>() * 0.1)
        .collect();
    WeightTensor { layer_id: 1, m, n, k, data }
}
