//! Average bits per weight of SimYOLOv2 under several ratio assignments.

use std::collections::BTreeMap;

use mixdse::quant::avg_bits;
use mixdse::NetworkDesc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data");
    let net = NetworkDesc::from_path(format!("{dir}/simyolov2.json"))?;
    let proposed: BTreeMap<String, f64> = serde_json::from_str(&std::fs::read_to_string(format!("{dir}/simyolov2_ratios.json"))?)?;
    let proposed: BTreeMap<u32, f64> = proposed.into_iter().map(|(k, v)| Ok((k.parse()?, v))).collect::<Result<_, std::num::ParseIntError>>()?;
    let uniform = |p: f64| -> BTreeMap<u32, f64> { net.conv_layers().filter(|l| l.quantize).map(|l| (l.id, p)).collect() };

    for (name, ratios) in [("binary", uniform(0.0)), ("uniform 0.05", uniform(0.05)), ("proposed", proposed)] {
        let bits = avg_bits(&net, &ratios)?;
        println!("{name:>12}: {bits:.4} bits/weight, {:.2}x smaller than 32-bit", 32.0 / bits);
    }
    Ok(())
}
