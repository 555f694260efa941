mod common;

use common::{random_net, simyolov2};
use mixdse::net::{parse_network, LayerKind, NetError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn simyolov2_first_layer_geometry() {
    let net = simyolov2();
    let c1 = net.conv_layers().next().unwrap();
    assert_eq!((c1.h_in, c1.n, c1.m, c1.k), (416, 3, 32, 3));
    assert_eq!(c1.params(), 864);
    assert_eq!(c1.macs().unwrap(), 149_520_384);
    assert_eq!(c1.output_fmap_elems(), 5_537_792);
    assert_eq!(c1.out_pixels(), 173_056);
}

#[test]
fn simyolov2_workload() {
    let net = simyolov2();
    assert_eq!(net.conv_count(), 17);
    let gop = 2.0 * net.total_macs() as f64 / 1e9;
    assert!((gop - 17.18).abs() < 0.01, "{gop} GOP");
    let last = net.conv_layers().last().unwrap();
    assert_eq!((last.h_out(), last.m), (13, 125));
}

#[test]
fn pooling_halves_resolution() {
    let net = simyolov2();
    for l in net.layers.iter().filter(|l| l.kind == LayerKind::MaxPool) {
        assert_eq!(l.h_out(), l.h_in.div_ceil(2));
        assert_eq!(l.params(), 0);
    }
}

#[test]
fn rejects_bad_documents() {
    let base = |layers: &str| {
        format!(r#"{{"name":"x","input":{{"h":8,"w":8,"c":3}},"precision":{{"q_a":8,"q_w":8}},"layers":{layers}}}"#)
    };
    assert!(matches!(parse_network("{"), Err(NetError::Json(_))));
    assert!(parse_network(&base("[]")).is_err());
    assert!(parse_network(&base(r#"[{"id":2,"kind":"conv","k":3,"out_channels":4}]"#)).is_err());
    assert!(parse_network(&base(r#"[{"id":1,"kind":"conv","k":9,"out_channels":4}]"#)).is_err());
    assert!(parse_network(&base(r#"[{"id":1,"kind":"conv","k":3}]"#)).is_err());
    assert!(matches!(
        parse_network(&base(r#"[{"id":1,"kind":"conv","k":3,"out_channels":4,"shortcut_from":1}]"#)),
        Err(NetError::DanglingReference { .. })
    ));
    assert!(matches!(
        parse_network(&base(r#"[{"id":1,"kind":"conv","k":3,"out_channels":4,"in_channels":5}]"#)),
        Err(NetError::GeometryMismatch { .. })
    ));
    assert!(parse_network(&base(r#"[{"id":1,"kind":"conv","k":3,"out_channels":4,"color":1}]"#)).is_err());
}

proptest! {
    #[test]
    fn json_round_trip(seed in any::<u64>(), convs in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, convs, 40, 48);
        let again = parse_network(&net.to_json()).unwrap();
        prop_assert_eq!(net.to_json(), again.to_json());
        prop_assert_eq!(net.layers.len(), again.layers.len());
    }

    #[test]
    fn macs_are_params_times_output_pixels(seed in any::<u64>(), convs in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, convs, 40, 48);
        let mut prev_m = net.input.c;
        for l in &net.layers {
            prop_assert_eq!(l.n, prev_m);
            prev_m = l.m;
            if l.is_conv() {
                let expect = l.k as u64 * l.k as u64 * l.n as u64 * l.m as u64;
                prop_assert_eq!(l.params(), expect);
                prop_assert_eq!(l.macs().unwrap(), expect * l.h_out() as u64 * l.w_out() as u64);
            }
        }
    }
}
