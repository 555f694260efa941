mod common;

use std::collections::BTreeMap;

use common::weights::random_tensor;
use common::{random_net, simyolov2};
use mixdse::quant::{
    avg_bits, compression_rate, large_count, partition_filter, quantize_layer, quantize_layer_with, read_weight_file,
    reconstruct, write_weight_file, AlphaMode, QuantError, QuantOptions, Selection, WeightTensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sq_error(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

#[test]
fn single_layer_compression_extremes() {
    assert_eq!(compression_rate(0.0, 1000, 1000), 32.0);
    assert_eq!(compression_rate(1.0, 1000, 1000), 4.0);
}

#[test]
fn large_count_rounds_up() {
    assert_eq!(large_count(100, 0.07), 7);
    assert_eq!(large_count(9, 0.1), 1);
    assert_eq!(large_count(9, 0.0), 0);
    assert_eq!(large_count(9, 1.0), 9);
}

#[test]
fn ratio_outside_unit_interval_is_rejected() {
    let t = WeightTensor { layer_id: 1, m: 1, n: 1, k: 1, data: vec![0.5] };
    assert!(matches!(quantize_layer(&t, 1.5), Err(QuantError::Ratio(_))));
    assert!(matches!(quantize_layer(&t, -0.1), Err(QuantError::Ratio(_))));
}

#[test]
fn non_finite_weights_are_rejected() {
    let t = WeightTensor { layer_id: 1, m: 1, n: 1, k: 1, data: vec![f32::NAN] };
    assert!(quantize_layer(&t, 0.5).is_err());
}

#[test]
fn missing_ratio_is_reported() {
    let net = simyolov2();
    assert!(matches!(avg_bits(&net, &BTreeMap::new()), Err(QuantError::MissingRatio(_))));
}

#[test]
fn full_ratio_reproduces_weights_within_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_tensor(&mut rng, 4, 3, 3);
    let mixed = quantize_layer(&t, 1.0).unwrap();
    let back = reconstruct(&mixed);
    for (w, r) in t.data.iter().zip(&back) {
        assert!((w - r).abs() <= mixed.residual_scale / 2.0 + 1e-6);
    }
}

#[test]
fn weight_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tensors = vec![random_tensor(&mut rng, 2, 3, 3), WeightTensor { layer_id: 7, ..random_tensor(&mut rng, 5, 1, 1) }];
    let mut buf = Vec::new();
    write_weight_file(&mut buf, &tensors).unwrap();
    assert_eq!(read_weight_file(buf.as_slice()).unwrap(), tensors);
    assert!(read_weight_file(&buf[..buf.len() - 1]).is_err());
}

proptest! {
    #[test]
    fn partition_is_disjoint_and_covering(ws in prop::collection::vec(-1.0f32..1.0, 1..200), p in 0.0f64..=1.0) {
        let part = partition_filter(&ws, p);
        prop_assert_eq!(part.large.len(), (p * ws.len() as f64 - 1e-9).ceil().max(0.0) as usize);
        let mut all: Vec<u32> = part.small.iter().chain(&part.large).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ws.len() as u32).collect::<Vec<_>>());
        let min_large = part.large.iter().map(|&i| ws[i as usize].abs()).fold(f32::INFINITY, f32::min);
        prop_assert!(part.small.iter().all(|&i| ws[i as usize].abs() <= min_large));
    }

    #[test]
    fn error_grows_by_at_most_the_rounding_bound(seed in any::<u64>(), p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let (p, p2) = if p <= q { (p, q) } else { (q, p) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..5u32);
        let k = [1u32, 3][rng.gen_range(0..2)];
        let t = random_tensor(&mut rng, 1, n, k);
        let max = t.data.iter().fold(0f32, |a, w| a.max(w.abs()));
        // Large enough that no residual is clamped at either ratio.
        let s_r = (2.0 * max / 127.0).max(1e-6);
        let opts = QuantOptions { residual_scale: Some(s_r), ..QuantOptions::default() };
        let lo = quantize_layer_with(&t, p, opts).unwrap();
        let hi = quantize_layer_with(&t, p2, opts).unwrap();
        let bound = large_count(t.data.len(), p2) as f64 * (s_r as f64 / 2.0).powi(2);
        let (e_lo, e_hi) = (sq_error(&t.data, &reconstruct(&lo)), sq_error(&t.data, &reconstruct(&hi)));
        prop_assert!(e_hi <= e_lo + bound + 1e-9, "{} > {} + {}", e_hi, e_lo, bound);
    }

    #[test]
    fn layer_wise_takes_top_of_whole_layer(seed in any::<u64>(), p in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (rng.gen_range(1..6), rng.gen_range(1..4));
        let t = random_tensor(&mut rng, m, n, 3);
        let opts = QuantOptions { selection: Selection::LayerWise, ..QuantOptions::default() };
        let mixed = quantize_layer_with(&t, p, opts).unwrap();
        let positions: usize = mixed.filters.iter().map(|f| f.residuals.len()).sum();
        prop_assert_eq!(positions, large_count(t.data.len(), p));
        prop_assert_eq!(mixed.params(), t.data.len());
    }

    #[test]
    fn alpha_modes_agree_at_zero_ratio(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_tensor(&mut rng, 3, 2, 3);
        let a = quantize_layer_with(&t, 0.0, QuantOptions::default()).unwrap();
        let b = quantize_layer_with(&t, 0.0, QuantOptions { alpha: AlphaMode::AllWeights, ..QuantOptions::default() }).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn avg_bits_spans_one_to_eight(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = rng.gen_range(1..7);
        let mut net = random_net(&mut rng, convs, 24, 24);
        net.layers.iter_mut().for_each(|l| l.quantize = true);
        let at = |p: f64| {
            let ratios = net.conv_layers().map(|l| (l.id, p)).collect();
            avg_bits(&net, &ratios).unwrap()
        };
        prop_assert!((at(0.0) - 1.0).abs() < 1e-12);
        prop_assert!((at(1.0) - 8.0).abs() < 1e-12);
        let mid = at(0.5);
        prop_assert!((mid - 4.5).abs() < 1e-12);
    }
}
