#![allow(dead_code)]
pub mod weights;

use mixdse::dse::{Tile, TilingPlan};
use mixdse::net::{parse_network, NetworkDesc};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

pub fn data_path(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn simyolov2() -> NetworkDesc {
    NetworkDesc::from_path(data_path("simyolov2.json")).expect("asset parses")
}

/// Largest power of two not above `n`.
pub fn floor_pow2(n: u32) -> u32 {
    1 << (31 - n.leading_zeros())
}

pub fn random_pow2(rng: &mut impl Rng, max: u32) -> u32 {
    1 << rng.gen_range(0..=floor_pow2(max).trailing_zeros())
}

/// Random conv chain: `convs` conv layers, optional 2x pooling, optional
/// shortcut edges, input side at most `max_h`.
pub fn random_net(rng: &mut impl Rng, convs: usize, max_h: u32, max_ch: u32) -> NetworkDesc {
    let h = rng.gen_range(4..=max_h);
    let w = rng.gen_range(4..=max_h);
    let c = rng.gen_range(1..=max_ch);
    let q_a = *[4u32, 8, 16].choose(rng).unwrap();
    let mut layers = Vec::new();
    let mut id = 1u32;
    let (mut cur_h, mut cur_w) = (h, w);
    let mut conv_ids = Vec::new();
    for i in 0..convs {
        let k = *[1u32, 3, 3, 5].choose(rng).unwrap();
        let k = if k > cur_h.min(cur_w) { 1 } else { k };
        let mut layer = json!({
            "id": id,
            "kind": if k == 1 { "pointwise-conv" } else { "conv" },
            "k": k,
            "out_channels": rng.gen_range(1..=max_ch),
            "quantize": i != 0 && i + 1 != convs,
        });
        if conv_ids.len() >= 2 && rng.gen_bool(0.3) {
            layer["shortcut_from"] = json!(*conv_ids.choose(rng).unwrap());
        }
        if rng.gen_bool(0.2) {
            layer["delay_rows"] = json!(rng.gen_range(0..4));
        }
        layers.push(layer);
        conv_ids.push(id);
        id += 1;
        if i + 1 < convs && cur_h >= 4 && cur_w >= 4 && rng.gen_bool(0.3) {
            layers.push(json!({"id": id, "kind": "maxpool", "k": 2, "stride": 2}));
            id += 1;
            cur_h = cur_h.div_ceil(2);
            cur_w = cur_w.div_ceil(2);
        }
    }
    let doc = json!({
        "name": "random",
        "input": {"h": h, "w": w, "c": c},
        "precision": {"q_a": q_a, "q_w": 8, "q_s": 32, "q_full": *[8u32, 16, 32].choose(rng).unwrap()},
        "layers": layers,
    });
    parse_network(&doc.to_string()).expect("generated network is valid")
}

/// Random valid plan: chained power-of-two group-1 tiles, one square main tile.
pub fn random_plan(rng: &mut impl Rng, net: &NetworkDesc, boundary: usize, params_on_chip: bool) -> TilingPlan {
    let convs: Vec<_> = net.conv_layers().collect();
    let mut tiles = Vec::new();
    for (c, l) in convs.iter().enumerate().take(boundary) {
        let t_i = if c == 0 { random_pow2(rng, l.n) } else { tiles.last().map(|t: &Tile| t.t_o).unwrap() };
        tiles.push(Tile { t_i, t_o: random_pow2(rng, l.m) });
    }
    if boundary < convs.len() {
        let cap = convs[boundary..].iter().map(|l| l.n.min(l.m)).min().unwrap();
        let t = random_pow2(rng, cap);
        tiles.extend(std::iter::repeat_n(Tile::square(t), convs.len() - boundary));
    }
    let plan = TilingPlan { boundary, params_on_chip, tiles };
    plan.validate(net).expect("generated plan is valid");
    plan
}
